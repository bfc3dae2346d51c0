//! Online reward learning.
//!
//! Iteration `i` produces the loss `L^i(r) = V^i(r) - V^E(r)`, where `V^i` is
//! the undiscounted return of the agent's trajectory under `r` and `V^E` the
//! mean return of the expert demonstrations. Both are linear in the reward
//! table, so `L^i(r) = <g^i, r>` with `g^i` the agent visit counts minus the
//! mean expert visit counts. The reward learner plays `r^i` before seeing
//! `L^i` and is scored by its average regret against the best fixed reward in
//! hindsight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::{ClassKind, Parameterized, RewardFunction};
use crate::error::{invalid, mismatch, Error, Result};
use crate::mdp::{Dataset, EnvShape, SaTable, Trajectory};

/// No-regret update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardStrategy {
    /// Projected online gradient descent with step `scale / sqrt(k)`.
    Ogd { scale: f64 },
    /// Follow the regularized leader with penalty `beta * ||params||^2`.
    FtrlL2 { beta: f64 },
}

impl RewardStrategy {
    /// OGD with the default step scale `horizon`.
    pub fn default_ogd(shape: &EnvShape) -> Self {
        RewardStrategy::Ogd {
            scale: shape.horizon as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RewardStrategy::Ogd { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(invalid(format!("OGD scale must be positive, got {scale}")))
            }
            RewardStrategy::FtrlL2 { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(invalid(format!("FTRL beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Visit counts of one trajectory.
pub fn visit_counts(shape: EnvShape, trajectory: &Trajectory) -> SaTable {
    let mut t = SaTable::zeros(shape);
    for (h, st) in trajectory.steps().iter().enumerate() {
        let i = shape.sa_index(h, st.state, st.action);
        t.values_mut()[i] += 1.0;
    }
    t
}

/// Per-trajectory mean visit counts.
pub fn mean_visits(dataset: &Dataset) -> Result<SaTable> {
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    let shape = dataset.shape();
    let mut t = SaTable::zeros(shape);
    for traj in dataset.trajectories() {
        for (h, st) in traj.steps().iter().enumerate() {
            t.values_mut()[shape.sa_index(h, st.state, st.action)] += 1.0;
        }
    }
    let n = dataset.len() as f64;
    t.values_mut().iter_mut().for_each(|v| *v /= n);
    Ok(t)
}

fn trajectory_return(table: &SaTable, trajectory: &Trajectory) -> f64 {
    trajectory
        .steps()
        .iter()
        .enumerate()
        .map(|(h, st)| table.get(h, st.state, st.action))
        .sum()
}

/// Mean undiscounted return of the dataset's trajectories under `reward`.
pub fn empirical_value(reward: &RewardFunction, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("empirical value of an empty dataset"));
    }
    if reward.shape() != dataset.shape() {
        return Err(mismatch("reward and dataset shapes differ"));
    }
    let table = reward.materialize();
    let total: f64 = dataset
        .trajectories()
        .iter()
        .map(|t| trajectory_return(&table, t))
        .sum();
    Ok(total / dataset.len() as f64)
}

/// `L(r) = V_agent(r) - V_expert(r)` for a single agent trajectory.
pub fn loss(reward: &RewardFunction, agent: &Trajectory, expert: &Dataset) -> Result<f64> {
    if expert.is_empty() {
        return Err(invalid("expert demonstrations are empty"));
    }
    let table = reward.materialize();
    let expert_value = empirical_value(reward, expert)?;
    Ok(trajectory_return(&table, agent) - expert_value)
}

/// Gradient of [`loss`] with respect to the reward table.
pub fn loss_gradient(agent: &Trajectory, expert_mean_visits: &SaTable) -> SaTable {
    let shape = expert_mean_visits.shape();
    let mut g = visit_counts(shape, agent);
    for (x, e) in g.values_mut().iter_mut().zip(expert_mean_visits.values()) {
        *x -= e;
    }
    g
}

/// Observed losses, the rewards played against them, and running sums.
///
/// Entry `i` pairs the agent trajectory `tau^i` with the reward `r^i` that was
/// chosen before `L^i` was revealed; entry 0 belongs to the initial policy.
#[derive(Clone, Debug)]
pub struct RewardHistory {
    expert: Dataset,
    expert_visits: SaTable,
    trajectories: Vec<Trajectory>,
    played: Vec<RewardFunction>,
    /// `sum_i g^i`.
    coefficient: SaTable,
    /// `sum_i L^i(r^i)`.
    played_loss: f64,
}

impl RewardHistory {
    pub fn new(expert: Dataset) -> Result<Self> {
        let expert_visits = mean_visits(&expert)?;
        let shape = expert.shape();
        Ok(Self {
            expert,
            expert_visits,
            trajectories: Vec::new(),
            played: Vec::new(),
            coefficient: SaTable::zeros(shape),
            played_loss: 0.0,
        })
    }

    /// Appends `(tau^i, r^i)`.
    pub fn record(&mut self, trajectory: Trajectory, played: RewardFunction) -> Result<()> {
        let shape = self.expert.shape();
        if played.shape() != shape {
            return Err(mismatch("played reward shape differs from the expert data"));
        }
        let trajectory = Trajectory::new(&shape, trajectory.steps().to_vec())?;
        let g = loss_gradient(&trajectory, &self.expert_visits);
        self.played_loss += g.dot(&played.materialize());
        for (c, x) in self.coefficient.values_mut().iter_mut().zip(g.values()) {
            *c += x;
        }
        self.trajectories.push(trajectory);
        self.played.push(played);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn expert(&self) -> &Dataset {
        &self.expert
    }

    pub fn expert_visits(&self) -> &SaTable {
        &self.expert_visits
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn played(&self) -> &[RewardFunction] {
        &self.played
    }

    /// Cumulative loss coefficient `c = sum_i g^i`; `sum_i L^i(r) = <c, r>`.
    pub fn coefficient(&self) -> &SaTable {
        &self.coefficient
    }

    /// Average regret of the recorded plays (tabular comparator).
    pub fn opt_error(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(invalid("no losses observed"));
        }
        if let Some(r) = self.played.last() {
            if r.kind() != ClassKind::Tabular {
                return Err(Error::Unsupported(
                    "exact comparator needs the tabular class".into(),
                ));
            }
        }
        let best: f64 = self.coefficient.values().iter().map(|c| c.min(0.0)).sum();
        Ok((self.played_loss - best) / self.len() as f64)
    }
}

/// Next reward `r^k` from the `k` losses observed so far.
pub fn update_reward(history: &RewardHistory, strategy: &RewardStrategy) -> Result<RewardFunction> {
    strategy.validate()?;
    let k = history.len();
    let last = history
        .played
        .last()
        .ok_or_else(|| invalid("update needs at least one observed loss"))?;
    match *strategy {
        RewardStrategy::Ogd { scale } => {
            let g_table = loss_gradient(&history.trajectories[k - 1], &history.expert_visits);
            let g = last.pullback(&g_table);
            let eta = scale / (k as f64).sqrt();
            let raw: Vec<f64> = last
                .params()
                .iter()
                .zip(&g)
                .map(|(p, d)| p - eta * d)
                .collect();
            last.with_params(&raw)
        }
        RewardStrategy::FtrlL2 { beta } => {
            // argmin <c, r> + beta ||w||^2 is -c / (2 beta), then projected.
            let c = last.pullback(&history.coefficient);
            let raw: Vec<f64> = c.iter().map(|x| -x / (2.0 * beta)).collect();
            last.with_params(&raw)
        }
    }
}

/// Best fixed tabular reward in hindsight: 1 where the cumulative coefficient
/// is negative, 0 otherwise.
pub fn best_response_reward(history: &RewardHistory) -> Result<RewardFunction> {
    if history.is_empty() {
        return Err(invalid("no losses observed"));
    }
    if history
        .played
        .iter()
        .any(|r| r.kind() != ClassKind::Tabular)
    {
        return Err(Error::Unsupported(
            "closed-form comparator exists only for the tabular class".into(),
        ));
    }
    let raw: Vec<f64> = history
        .coefficient
        .values()
        .iter()
        .map(|&c| if c < 0.0 { 1.0 } else { 0.0 })
        .collect();
    RewardFunction::tabular(history.expert.shape(), &raw)
}

/// Regret objective `sum_i L^i(r^i) - L^i(r)` of a fixed comparator `r`.
pub fn regret_against(
    history: &RewardHistory,
    rewards: &[RewardFunction],
    comparator: &RewardFunction,
) -> Result<f64> {
    if rewards.len() != history.len() {
        return Err(mismatch(format!(
            "{} rewards for {} observed losses",
            rewards.len(),
            history.len()
        )));
    }
    let mut total = 0.0;
    for (traj, r) in history.trajectories.iter().zip(rewards) {
        let g = loss_gradient(traj, &history.expert_visits);
        total += g.dot(&r.materialize());
    }
    Ok(total - history.coefficient.dot(&comparator.materialize()))
}

/// Average regret `eps_opt^r` of `rewards` against the best tabular reward.
pub fn reward_opt_error(history: &RewardHistory, rewards: &[RewardFunction]) -> Result<f64> {
    if history.is_empty() {
        return Err(invalid("reward optimization error needs K >= 1"));
    }
    let best = best_response_reward(history)?;
    Ok(regret_against(history, rewards, &best)? / history.len() as f64)
}

/// Random-search lower bound on `eps_opt^r` for classes without a closed-form
/// comparator: the best of `samples` random parameter vectors (drawn in the
/// box `[-spread, spread]` and projected) plus every played reward.
pub fn reward_opt_error_lower_bound<R: Rng + ?Sized>(
    history: &RewardHistory,
    rewards: &[RewardFunction],
    samples: usize,
    spread: f64,
    rng: &mut R,
) -> Result<f64> {
    let template = rewards
        .first()
        .ok_or_else(|| invalid("reward sequence is empty"))?;
    let mut best = f64::NEG_INFINITY;
    for r in rewards {
        best = best.max(regret_against(history, rewards, r)?);
    }
    let n = template.params().len();
    for _ in 0..samples {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..=spread)).collect();
        let cand = template.with_params(&raw)?;
        best = best.max(regret_against(history, rewards, &cand)?);
    }
    Ok(best / history.len() as f64)
}
