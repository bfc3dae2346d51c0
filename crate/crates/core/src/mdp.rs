//! Exact finite-horizon MDP machinery.
//!
//! Steps are zero-based in code: step `h` runs over `0..horizon`, and the
//! value at step `horizon` is identically zero. Every table is stored flat and
//! row-major in `(h, s, a)` order, with transitions additionally indexed by the
//! next state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};

/// Row-sum tolerance for probability tables.
pub const PROB_TOL: f64 = 1e-9;

/// Sizes shared by every table of one environment, plus the fixed start state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvShape {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
}

impl EnvShape {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        initial_state: usize,
    ) -> Result<Self> {
        let shape = Self {
            states,
            actions,
            horizon,
            initial_state,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 || self.horizon == 0 {
            return Err(invalid(format!(
                "states, actions and horizon must be positive (got {}, {}, {})",
                self.states, self.actions, self.horizon
            )));
        }
        if self.initial_state >= self.states {
            return Err(invalid(format!(
                "initial state {} out of range for {} states",
                self.initial_state, self.states
            )));
        }
        Ok(())
    }

    /// Number of `(h, s, a)` entries.
    pub fn sa_len(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    /// Number of `(h, s, a, s')` entries.
    pub fn sas_len(&self) -> usize {
        self.sa_len() * self.states
    }

    #[inline]
    pub fn sa_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    /// Upper end of the value range at step `h`: `horizon - h`.
    #[inline]
    pub fn remaining(&self, h: usize) -> f64 {
        (self.horizon - h) as f64
    }

    fn check(&self, other: &EnvShape, what: &str) -> Result<()> {
        if self.states != other.states
            || self.actions != other.actions
            || self.horizon != other.horizon
        {
            return Err(mismatch(format!(
                "{what}: ({}, {}, {}) vs ({}, {}, {})",
                self.states, self.actions, self.horizon, other.states, other.actions, other.horizon
            )));
        }
        Ok(())
    }
}

/// A per-step table over state-action pairs: rewards, Q-values, occupancies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaTable {
    shape: EnvShape,
    values: Vec<f64>,
}

impl SaTable {
    pub fn new(shape: EnvShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.sa_len() {
            return Err(mismatch(format!(
                "table needs {} entries, got {}",
                shape.sa_len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("table entries must be finite"));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: EnvShape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.sa_len()],
        }
    }

    pub fn zeros(shape: EnvShape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn from_fn(shape: EnvShape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.sa_len());
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    values.push(f(h, s, a));
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> EnvShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.shape.sa_index(h, s, a)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        let i = self.shape.sa_index(h, s, a);
        self.values[i] = v;
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.shape.sa_index(h, s, 0);
        &self.values[start..start + self.shape.actions]
    }

    /// Maximizing action at `(h, s)` and its value; ties go to the lowest index.
    #[inline]
    pub fn argmax(&self, h: usize, s: usize) -> (usize, f64) {
        argmax(self.row(h, s))
    }

    /// Maximum absolute entrywise difference at step `h`.
    pub fn step_sup_diff(&self, other: &SaTable, h: usize) -> f64 {
        let n = self.shape.states * self.shape.actions;
        let start = h * n;
        self.values[start..start + n]
            .iter()
            .zip(&other.values[start..start + n])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Sum over `(s, a)` of the entries at step `h`.
    pub fn step_sum(&self, h: usize) -> f64 {
        let n = self.shape.states * self.shape.actions;
        self.values[h * n..(h + 1) * n].iter().sum()
    }

    /// Inner product with another table over all `(h, s, a)`.
    pub fn dot(&self, other: &SaTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * y)
            .sum()
    }
}

/// First index attaining the maximum of a non-empty slice.
#[inline]
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best, best_v)
}

fn check_distribution(row: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if p < 0.0 || !p.is_finite() {
            return Err(invalid(format!(
                "{}: negative or non-finite probability {p}",
                what()
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{}: probabilities sum to {sum}", what())));
    }
    Ok(())
}

/// Non-stationary transition kernel `P_h(s' | s, a)` with a fixed start state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DynamicsRepr", into = "DynamicsRepr")]
pub struct Dynamics {
    shape: EnvShape,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DynamicsRepr {
    shape: EnvShape,
    probs: Vec<f64>,
}

impl TryFrom<DynamicsRepr> for Dynamics {
    type Error = Error;
    fn try_from(r: DynamicsRepr) -> Result<Self> {
        Dynamics::new(r.shape, r.probs)
    }
}

impl From<Dynamics> for DynamicsRepr {
    fn from(d: Dynamics) -> Self {
        DynamicsRepr {
            shape: d.shape,
            probs: d.probs,
        }
    }
}

impl Dynamics {
    pub fn new(shape: EnvShape, probs: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if probs.len() != shape.sas_len() {
            return Err(mismatch(format!(
                "transition table needs {} entries, got {}",
                shape.sas_len(),
                probs.len()
            )));
        }
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    let start = shape.sa_index(h, s, a) * shape.states;
                    check_distribution(&probs[start..start + shape.states], || {
                        format!("transition row (h={h}, s={s}, a={a})")
                    })?;
                }
            }
        }
        Ok(Self { shape, probs })
    }

    /// Builds a kernel from rows produced per `(h, s, a)`.
    pub fn from_rows(
        shape: EnvShape,
        mut row: impl FnMut(usize, usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(shape.sas_len());
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    let r = row(h, s, a);
                    if r.len() != shape.states {
                        return Err(mismatch(format!("transition row has {} entries", r.len())));
                    }
                    probs.extend(r);
                }
            }
        }
        Self::new(shape, probs)
    }

    pub fn shape(&self) -> EnvShape {
        self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.sa_index(h, s, a) * self.shape.states;
        &self.probs[start..start + self.shape.states]
    }
}

/// Per-step action distributions `pi_h(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct Policy {
    table: SaTable,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    shape: EnvShape,
    probs: Vec<f64>,
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = Error;
    fn try_from(r: PolicyRepr) -> Result<Self> {
        Policy::new(SaTable::new(r.shape, r.probs)?)
    }
}

impl From<Policy> for PolicyRepr {
    fn from(p: Policy) -> Self {
        PolicyRepr {
            shape: p.table.shape,
            probs: p.table.values,
        }
    }
}

impl Policy {
    pub fn new(table: SaTable) -> Result<Self> {
        let shape = table.shape();
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                check_distribution(table.row(h, s), || format!("policy row (h={h}, s={s})"))?;
            }
        }
        Ok(Self { table })
    }

    pub fn uniform(shape: EnvShape) -> Self {
        Self {
            table: SaTable::filled(shape, 1.0 / shape.actions as f64),
        }
    }

    /// Deterministic policy from one action per `(h, s)`, indexed `h * states + s`.
    pub fn deterministic(shape: EnvShape, actions: &[usize]) -> Result<Self> {
        if actions.len() != shape.horizon * shape.states {
            return Err(mismatch(format!(
                "deterministic policy needs {} actions, got {}",
                shape.horizon * shape.states,
                actions.len()
            )));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= shape.actions) {
            return Err(invalid(format!("action {bad} out of range")));
        }
        let mut table = SaTable::zeros(shape);
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                table.set(h, s, actions[h * shape.states + s], 1.0);
            }
        }
        Ok(Self { table })
    }

    /// Always plays `action`.
    pub fn constant(shape: EnvShape, action: usize) -> Result<Self> {
        Self::deterministic(shape, &vec![action; shape.horizon * shape.states])
    }

    pub fn shape(&self) -> EnvShape {
        self.table.shape()
    }

    pub fn table(&self) -> &SaTable {
        &self.table
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.table.get(h, s, a)
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        self.table.row(h, s)
    }

    /// The chosen action per `(h, s)` when every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(shape.horizon * shape.states);
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                let row = self.row(h, s);
                let a = row.iter().position(|&p| p == 1.0)?;
                out.push(a);
            }
        }
        Some(out)
    }
}

/// Ground-truth environment: dynamics plus the true reward in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRepr", into = "MdpRepr")]
pub struct MdpSpec {
    dynamics: Dynamics,
    reward: SaTable,
}

#[derive(Serialize, Deserialize)]
struct MdpRepr {
    dynamics: Dynamics,
    reward: SaTable,
}

impl TryFrom<MdpRepr> for MdpSpec {
    type Error = Error;
    fn try_from(r: MdpRepr) -> Result<Self> {
        MdpSpec::new(r.dynamics, r.reward)
    }
}

impl From<MdpSpec> for MdpRepr {
    fn from(m: MdpSpec) -> Self {
        MdpRepr {
            dynamics: m.dynamics,
            reward: m.reward,
        }
    }
}

impl MdpSpec {
    pub fn new(dynamics: Dynamics, reward: SaTable) -> Result<Self> {
        dynamics
            .shape()
            .check(&reward.shape(), "reward vs dynamics")?;
        if reward.shape().initial_state != dynamics.shape().initial_state {
            return Err(mismatch(
                "reward and dynamics disagree on the initial state",
            ));
        }
        if let Some(bad) = reward.values().iter().find(|&&r| !(0.0..=1.0).contains(&r)) {
            return Err(invalid(format!("reward entry {bad} outside [0, 1]")));
        }
        Ok(Self { dynamics, reward })
    }

    pub fn shape(&self) -> EnvShape {
        self.dynamics.shape()
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn true_reward(&self) -> &SaTable {
        &self.reward
    }
}

/// One `(state, action, next_state)` transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// An episode of exactly `horizon` steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(shape: &EnvShape, steps: Vec<Step>) -> Result<Self> {
        if steps.len() != shape.horizon {
            return Err(invalid(format!(
                "trajectory length {} differs from horizon {}",
                steps.len(),
                shape.horizon
            )));
        }
        for (h, st) in steps.iter().enumerate() {
            if st.state >= shape.states
                || st.next_state >= shape.states
                || st.action >= shape.actions
            {
                return Err(invalid(format!("step {h} has an out-of-range index")));
            }
            if h + 1 < steps.len() && steps[h + 1].state != st.next_state {
                return Err(invalid(format!(
                    "step {h} does not chain into step {}",
                    h + 1
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Expert,
    Replay,
}

/// Ordered trajectories sharing one environment shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    shape: EnvShape,
    role: DatasetRole,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(shape: EnvShape, role: DatasetRole) -> Self {
        Self {
            shape,
            role,
            trajectories: Vec::new(),
        }
    }

    pub fn from_trajectories(
        shape: EnvShape,
        role: DatasetRole,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        let mut d = Self::new(shape, role);
        for t in trajectories {
            d.push(t)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, trajectory: Trajectory) -> Result<()> {
        // Re-validate against this dataset's shape.
        let t = Trajectory::new(&self.shape, trajectory.steps)?;
        self.trajectories.push(t);
        Ok(())
    }

    pub fn shape(&self) -> EnvShape {
        self.shape
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of transitions.
    pub fn transitions(&self) -> usize {
        self.trajectories.len() * self.shape.horizon
    }
}

/// One aggregated `(h, s, a, s')` transition with its multiplicity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountEntry {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub count: f64,
}

/// Dataset transitions grouped by `(h, s, a, s')`, sorted in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCounts {
    shape: EnvShape,
    entries: Vec<CountEntry>,
    totals: SaTable,
}

impl TransitionCounts {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let shape = dataset.shape();
        let mut map = std::collections::BTreeMap::new();
        for traj in dataset.trajectories() {
            for (h, st) in traj.steps().iter().enumerate() {
                *map.entry((h, st.state, st.action, st.next_state))
                    .or_insert(0u64) += 1;
            }
        }
        let mut totals = SaTable::zeros(shape);
        let entries = map
            .into_iter()
            .map(|((h, state, action, next_state), c)| {
                let i = shape.sa_index(h, state, action);
                totals.values_mut()[i] += c as f64;
                CountEntry {
                    h,
                    state,
                    action,
                    next_state,
                    count: c as f64,
                }
            })
            .collect();
        Self {
            shape,
            entries,
            totals,
        }
    }

    pub fn shape(&self) -> EnvShape {
        self.shape
    }

    pub fn entries(&self) -> &[CountEntry] {
        &self.entries
    }

    /// Visit counts `n_h(s, a)`.
    pub fn totals(&self) -> &SaTable {
        &self.totals
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_pair(dynamics: &Dynamics, table: &SaTable, what: &str) -> Result<()> {
    dynamics.shape().check(&table.shape(), what)
}

/// Expected next-step value `sum_s' P_h(s'|s,a) v(s')`.
#[inline]
fn expect(row: &[f64], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(p, x)| p * x).sum()
}

/// Q-values of a fixed policy, by backward induction.
pub fn policy_q(dynamics: &Dynamics, reward: &SaTable, policy: &Policy) -> Result<SaTable> {
    check_pair(dynamics, reward, "reward")?;
    check_pair(dynamics, policy.table(), "policy")?;
    let shape = dynamics.shape();
    let mut q = SaTable::zeros(shape);
    let mut v_next = vec![0.0; shape.states];
    for h in (0..shape.horizon).rev() {
        let mut v_here = vec![0.0; shape.states];
        for (s, v) in v_here.iter_mut().enumerate() {
            for a in 0..shape.actions {
                let val = reward.get(h, s, a) + expect(dynamics.row(h, s, a), &v_next);
                q.set(h, s, a, val);
                *v += policy.prob(h, s, a) * val;
            }
        }
        v_next = v_here;
    }
    Ok(q)
}

/// State values `V_h(s)` of a fixed policy for `h = 0..=horizon` (the last row is zero).
pub fn policy_state_values(
    dynamics: &Dynamics,
    reward: &SaTable,
    policy: &Policy,
) -> Result<Vec<Vec<f64>>> {
    let q = policy_q(dynamics, reward, policy)?;
    let shape = dynamics.shape();
    let mut out = Vec::with_capacity(shape.horizon + 1);
    for h in 0..shape.horizon {
        out.push(
            (0..shape.states)
                .map(|s| expect(policy.row(h, s), q.row(h, s)))
                .collect(),
        );
    }
    out.push(vec![0.0; shape.states]);
    Ok(out)
}

/// Exact value of `policy` from the start state.
pub fn policy_value(dynamics: &Dynamics, reward: &SaTable, policy: &Policy) -> Result<f64> {
    let q = policy_q(dynamics, reward, policy)?;
    let s1 = dynamics.shape().initial_state;
    Ok(expect(policy.row(0, s1), q.row(0, s1)))
}

/// State-action occupancy `d_h(s, a)` by forward recursion from the start state.
pub fn occupancy_measures(dynamics: &Dynamics, policy: &Policy) -> Result<SaTable> {
    check_pair(dynamics, policy.table(), "policy")?;
    let shape = dynamics.shape();
    let mut d = SaTable::zeros(shape);
    let mut state_dist = vec![0.0; shape.states];
    state_dist[shape.initial_state] = 1.0;
    for h in 0..shape.horizon {
        let mut next = vec![0.0; shape.states];
        for (s, &mass) in state_dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for a in 0..shape.actions {
                let w = mass * policy.prob(h, s, a);
                d.set(h, s, a, w);
                if w != 0.0 {
                    for (n, p) in next.iter_mut().zip(dynamics.row(h, s, a)) {
                        *n += w * p;
                    }
                }
            }
        }
        state_dist = next;
    }
    Ok(d)
}

/// Optimal Q-values `Q*_h = r_h + P_h max_a Q*_{h+1}` with `Q*_H = 0`.
pub fn optimal_q(dynamics: &Dynamics, reward: &SaTable) -> Result<SaTable> {
    check_pair(dynamics, reward, "reward")?;
    let shape = dynamics.shape();
    let mut q = SaTable::zeros(shape);
    let mut v_next = vec![0.0; shape.states];
    for h in (0..shape.horizon).rev() {
        let mut v_here = vec![0.0; shape.states];
        for (s, v) in v_here.iter_mut().enumerate() {
            for a in 0..shape.actions {
                q.set(
                    h,
                    s,
                    a,
                    reward.get(h, s, a) + expect(dynamics.row(h, s, a), &v_next),
                );
            }
            *v = q.argmax(h, s).1;
        }
        v_next = v_here;
    }
    Ok(q)
}

/// Largest entrywise violation of `Q_h = T_h Q_{h+1}`.
pub fn bellman_residual(dynamics: &Dynamics, reward: &SaTable, q: &SaTable) -> Result<f64> {
    check_pair(dynamics, reward, "reward")?;
    check_pair(dynamics, q, "q")?;
    let shape = dynamics.shape();
    let mut worst: f64 = 0.0;
    for h in 0..shape.horizon {
        let v_next: Vec<f64> = if h + 1 < shape.horizon {
            (0..shape.states).map(|s| q.argmax(h + 1, s).1).collect()
        } else {
            vec![0.0; shape.states]
        };
        for s in 0..shape.states {
            for a in 0..shape.actions {
                let target = reward.get(h, s, a) + expect(dynamics.row(h, s, a), &v_next);
                worst = worst.max((q.get(h, s, a) - target).abs());
            }
        }
    }
    Ok(worst)
}

/// Deterministic argmax policy, ties to the lowest action index.
pub fn greedy_policy(q: &SaTable) -> Policy {
    let shape = q.shape();
    let mut actions = Vec::with_capacity(shape.horizon * shape.states);
    for h in 0..shape.horizon {
        for s in 0..shape.states {
            actions.push(q.argmax(h, s).0);
        }
    }
    Policy::deterministic(shape, &actions).expect("argmax actions are in range")
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Rolls out one episode from the start state.
pub fn sample_trajectory<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    policy: &Policy,
    rng: &mut R,
) -> Result<Trajectory> {
    check_pair(dynamics, policy.table(), "policy")?;
    let shape = dynamics.shape();
    let mut steps = Vec::with_capacity(shape.horizon);
    let mut s = shape.initial_state;
    for h in 0..shape.horizon {
        let a = sample_index(policy.row(h, s), rng);
        let next = sample_index(dynamics.row(h, s, a), rng);
        steps.push(Step {
            state: s,
            action: a,
            next_state: next,
        });
        s = next;
    }
    Ok(Trajectory { steps })
}
