//! Optimism-regularized maximum likelihood over transition models.
//!
//! The learner minimizes `NLL(P) - lambda * V*_{P, r}` over per-row softmax
//! logits, then plans in the fitted model. The value term is handled by the
//! envelope argument: with the greedy plan `pi*` frozen, the derivative of its
//! value with respect to one probability is the occupancy of the row times the
//! next-step value, and the softmax chain rule centers that value within the row.

use serde::{Deserialize, Serialize};

use crate::classes::{ClassKind, Parameterized, RewardFunction, TransitionModel};
use crate::error::{mismatch, Error, Result};
use crate::mdp::{
    greedy_policy, occupancy_measures, optimal_q, policy_state_values, Dataset, Dynamics, EnvShape,
    Policy, SaTable, TransitionCounts,
};

/// Settings for [`solve_mb`].
///
/// As with the model-free learner, the supporting theory grows the
/// regularization weight like `sqrt(K)`; the default is a fixed desk-scale value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbSolverConfig {
    pub lambda_p: f64,
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop once a step improves the objective by less than this.
    pub tolerance: f64,
    pub trace: bool,
}

impl Default for MbSolverConfig {
    fn default() -> Self {
        Self {
            lambda_p: 0.1,
            max_iters: 200,
            step_size: 1.0,
            tolerance: 1e-6,
            trace: false,
        }
    }
}

impl MbSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_p < 0.0 || !self.lambda_p.is_finite() {
            return Err(Error::Config(format!(
                "lambda_p must be a finite non-negative number, got {}",
                self.lambda_p
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// One solver step as recorded in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbTraceRow {
    pub nll: f64,
    pub plan_value: f64,
    pub objective: f64,
}

/// Output of [`solve_mb`].
#[derive(Clone, Debug)]
pub struct MbSolution {
    pub model: TransitionModel,
    pub policy: Policy,
    pub plan_value: f64,
    pub objective: f64,
    /// Objective excess over the frequency estimate, floored at zero.
    pub eps_opt: f64,
    pub iterations: usize,
    pub trace: Vec<MbTraceRow>,
}

fn check(shape: EnvShape, other: EnvShape, what: &str) -> Result<()> {
    if shape.states != other.states
        || shape.actions != other.actions
        || shape.horizon != other.horizon
    {
        return Err(mismatch(format!(
            "{what} shape differs from the model shape"
        )));
    }
    Ok(())
}

fn log_softmax_at(row: &[f64], j: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
    row[j] - m - z.ln()
}

/// `-sum log P_h(s' | s, a)` over the dataset transitions.
pub fn nll(model: &TransitionModel, counts: &TransitionCounts) -> Result<f64> {
    check(model.shape(), counts.shape(), "dataset")?;
    let mut total = 0.0;
    for e in counts.entries() {
        total -= e.count * log_softmax_at(model.row_logits(e.h, e.state, e.action), e.next_state);
    }
    // rounding can leave -0.0 or a tiny negative on near-one-hot rows
    Ok(total.max(0.0))
}

/// Optimal value from the start state in the materialized model, with the
/// greedy plan that attains it.
pub fn plan(model: &TransitionModel, reward: &SaTable) -> Result<(f64, Policy)> {
    plan_dynamics(&model.materialize(), reward)
}

fn plan_dynamics(dynamics: &Dynamics, reward: &SaTable) -> Result<(f64, Policy)> {
    let q = optimal_q(dynamics, reward)?;
    let value = q.argmax(0, dynamics.shape().initial_state).1;
    Ok((value, greedy_policy(&q)))
}

/// Gradient over logits of the frozen-plan value `V^{pi*}_{P, r}`.
///
/// `d/d theta_{h,s,a,s'} = d_h(s, a) * p(s') * (V_{h+1}(s') - sum_j p(j) V_{h+1}(j))`.
pub fn value_gradient(model: &TransitionModel, reward: &SaTable) -> Result<Vec<f64>> {
    let dynamics = model.materialize();
    let (_, pi) = plan_dynamics(&dynamics, reward)?;
    frozen_value_gradient(&dynamics, reward, &pi)
}

/// [`value_gradient`] for an explicit plan.
pub fn frozen_value_gradient(
    dynamics: &Dynamics,
    reward: &SaTable,
    policy: &Policy,
) -> Result<Vec<f64>> {
    let shape = dynamics.shape();
    check(shape, reward.shape(), "reward")?;
    let d = occupancy_measures(dynamics, policy)?;
    let v = policy_state_values(dynamics, reward, policy)?;
    let mut grad = vec![0.0; shape.sas_len()];
    for h in 0..shape.horizon {
        let v_next = &v[h + 1];
        for s in 0..shape.states {
            for a in 0..shape.actions {
                let occ = d.get(h, s, a);
                if occ == 0.0 {
                    continue;
                }
                let p = dynamics.row(h, s, a);
                let mean: f64 = p.iter().zip(v_next).map(|(p, v)| p * v).sum();
                let start = shape.sa_index(h, s, a) * shape.states;
                for j in 0..shape.states {
                    grad[start + j] = occ * p[j] * (v_next[j] - mean);
                }
            }
        }
    }
    Ok(grad)
}

/// `NLL(P) - lambda * V*_{P, r}`.
pub fn mb_objective(
    model: &TransitionModel,
    counts: &TransitionCounts,
    reward: &SaTable,
    lambda_p: f64,
) -> Result<f64> {
    let n = nll(model, counts)?;
    if lambda_p == 0.0 {
        return Ok(n);
    }
    let (v, _) = plan(model, reward)?;
    Ok(n - lambda_p * v)
}

/// Empirical transition frequencies as logits, floored at `1e-12`; rows that
/// were never visited are uniform. Minimizes the likelihood term on its own.
pub fn mle_reference(counts: &TransitionCounts) -> TransitionModel {
    let shape = counts.shape();
    let mut logits = vec![0.0; shape.sas_len()];
    let totals = counts.totals();
    let mut freq = vec![0.0; shape.sas_len()];
    for e in counts.entries() {
        freq[shape.sa_index(e.h, e.state, e.action) * shape.states + e.next_state] += e.count;
    }
    for (row, (l, f)) in logits
        .chunks_mut(shape.states)
        .zip(freq.chunks(shape.states))
        .enumerate()
    {
        let n = totals.values()[row];
        if n > 0.0 {
            for (l, f) in l.iter_mut().zip(f) {
                *l = (f / n).max(1e-12).ln();
            }
        }
    }
    TransitionModel::from_logits(shape, logits).expect("frequency logits are finite")
}

/// Squared Hellinger distance `1 - sum sqrt(p q)` between two distributions.
pub fn squared_hellinger(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0)
}

/// Row-wise squared Hellinger distance averaged with the given `(h, s, a)`
/// weights, for example a behavior policy's occupancy.
pub fn mean_squared_hellinger(a: &Dynamics, b: &Dynamics, weights: &SaTable) -> Result<f64> {
    let shape = a.shape();
    check(shape, b.shape(), "second model")?;
    check(shape, weights.shape(), "weights")?;
    let mut total = 0.0;
    let mut mass = 0.0;
    for h in 0..shape.horizon {
        for s in 0..shape.states {
            for act in 0..shape.actions {
                let w = weights.get(h, s, act);
                if w > 0.0 {
                    total += w * squared_hellinger(a.row(h, s, act), b.row(h, s, act));
                    mass += w;
                }
            }
        }
    }
    Ok(if mass > 0.0 { total / mass } else { 0.0 })
}

/// Largest magnitude of one entry of the search direction.
const DIRECTION_CLIP: f64 = 4.0;

struct Iterate {
    model: TransitionModel,
    dynamics: Dynamics,
    policy: Policy,
    nll: f64,
    value: f64,
    objective: f64,
}

impl Iterate {
    fn new(
        model: TransitionModel,
        counts: &TransitionCounts,
        reward: &SaTable,
        lambda: f64,
    ) -> Result<Self> {
        let dynamics = model.materialize();
        let (value, policy) = plan_dynamics(&dynamics, reward)?;
        let nll = nll(&model, counts)?;
        Ok(Self {
            model,
            dynamics,
            policy,
            nll,
            value,
            objective: nll - lambda * value,
        })
    }
}

/// Approximately minimizes the regularized likelihood objective.
///
/// Starts from uniform logits and alternates planning with a step along the
/// Fisher-preconditioned gradient, which for a softmax row reduces to
/// `(1 - p_hat / p) - lambda * d * (V' - mean V') / n` per entry. Steps are
/// clipped and backtracked, and the best iterate is returned.
pub fn solve_mb(
    dataset: &Dataset,
    reward: &RewardFunction,
    config: &MbSolverConfig,
) -> Result<MbSolution> {
    config.validate()?;
    if reward.kind() != ClassKind::Tabular {
        return Err(Error::Unsupported(
            "the model-based solver handles tabular rewards only".into(),
        ));
    }
    let shape = dataset.shape();
    let r = reward.materialize();
    let counts = TransitionCounts::from_dataset(dataset);
    let lambda = config.lambda_p;

    let reference = mb_objective(&mle_reference(&counts), &counts, &r, lambda)?;
    let totals = counts.totals();
    let mut observed = vec![0.0; shape.sas_len()];
    for e in counts.entries() {
        observed[shape.sa_index(e.h, e.state, e.action) * shape.states + e.next_state] += e.count;
    }

    let mut cur = Iterate::new(TransitionModel::uniform(shape), &counts, &r, lambda)?;
    let mut trace = Vec::new();
    let record = |it: &Iterate, trace: &mut Vec<MbTraceRow>| {
        if config.trace {
            trace.push(MbTraceRow {
                nll: it.nll,
                plan_value: it.value,
                objective: it.objective,
            });
        }
    };
    record(&cur, &mut trace);
    let mut step = config.step_size;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        // Optimism enters as occupancy times the centered next-step value.
        let (occ, values) = if lambda > 0.0 {
            let occ = occupancy_measures(&cur.dynamics, &cur.policy)?;
            let values = policy_state_values(&cur.dynamics, &r, &cur.policy)?;
            (Some(occ), values)
        } else {
            (None, Vec::new())
        };
        let probs = cur.dynamics.probs();
        let mut direction = vec![0.0; shape.sas_len()];
        for row in 0..shape.sa_len() {
            let n = totals.values()[row];
            let p = &probs[row * shape.states..(row + 1) * shape.states];
            let base = row * shape.states;
            for j in 0..shape.states {
                if n > 0.0 {
                    direction[base + j] = 1.0 - observed[base + j] / (n * p[j]);
                }
            }
            if let Some(occ) = &occ {
                let d = occ.values()[row];
                if d > 0.0 {
                    let h = row / (shape.states * shape.actions);
                    let v_next = &values[h + 1];
                    let mean: f64 = p.iter().zip(v_next).map(|(p, v)| p * v).sum();
                    for j in 0..shape.states {
                        direction[base + j] -= lambda * d * (v_next[j] - mean) / n.max(1.0);
                    }
                }
            }
            for x in &mut direction[base..base + shape.states] {
                *x = x.clamp(-DIRECTION_CLIP, DIRECTION_CLIP);
            }
        }
        let mut accepted = false;
        let mut improvement = 0.0;
        for _ in 0..30 {
            let logits: Vec<f64> = cur
                .model
                .logits()
                .iter()
                .zip(&direction)
                .map(|(l, d)| l - step * d)
                .collect();
            let next = Iterate::new(cur.model.with_params(&logits)?, &counts, &r, lambda)?;
            if next.objective < cur.objective {
                improvement = cur.objective - next.objective;
                cur = next;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        record(&cur, &mut trace);
        if improvement < config.tolerance {
            break;
        }
        step = (step * 2.0).min(config.step_size);
    }

    // Every accepted step lowers the objective, so the last iterate is the best.
    Ok(MbSolution {
        eps_opt: (cur.objective - reference).max(0.0),
        objective: cur.objective,
        plan_value: cur.value,
        policy: cur.policy,
        model: cur.model,
        iterations,
        trace,
    })
}
