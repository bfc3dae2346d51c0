//! Exact error decomposition of the imitation gap.
//!
//! For iterates `pi^1..pi^K` trained against rewards `r^1..r^K`, the gap of
//! their uniform mixture splits into a reward-error term and a policy-error
//! term (see [`IterationRecord`](super::IterationRecord) for the formulas).
//! The split is an algebraic identity, so recomputing both sides from scratch
//! must agree to rounding error.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::mdp::{policy_value, MdpSpec, Policy, SaTable};

use super::run::{expert_policy, ExperimentResult};

/// Both sides of the decomposition, from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub iterations: usize,
    pub expert_value: f64,
    pub mixture_value: f64,
    /// `V^E - V^{mixture}`.
    pub gap: f64,
    pub reward_error: f64,
    pub policy_error: f64,
    /// `gap - (reward_error + policy_error)`.
    pub difference: f64,
}

/// Largest accepted `|difference|`.
pub const IDENTITY_TOL: f64 = 1e-9;

impl DecompositionReport {
    pub fn holds(&self) -> bool {
        self.difference.abs() <= IDENTITY_TOL
    }
}

impl std::fmt::Display for DecompositionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "iterations      {}", self.iterations)?;
        writeln!(f, "expert value    {:.12}", self.expert_value)?;
        writeln!(f, "mixture value   {:.12}", self.mixture_value)?;
        writeln!(f, "imitation gap   {:.12}", self.gap)?;
        writeln!(f, "reward error    {:.12}", self.reward_error)?;
        writeln!(f, "policy error    {:.12}", self.policy_error)?;
        write!(f, "difference      {:.3e}", self.difference)
    }
}

/// Recomputes the decomposition for explicit iterates and rewards. The expert
/// is the optimal policy of `mdp`.
pub fn decompose(
    mdp: &MdpSpec,
    policies: &[Policy],
    rewards: &[SaTable],
) -> Result<DecompositionReport> {
    if policies.is_empty() {
        return Err(Error::MissingArtifacts("no per-iteration policies".into()));
    }
    if policies.len() != rewards.len() {
        return Err(mismatch(format!(
            "{} policies but {} rewards",
            policies.len(),
            rewards.len()
        )));
    }
    let dyn_ = mdp.dynamics();
    let expert = expert_policy(mdp);
    let ve = policy_value(dyn_, mdp.true_reward(), &expert)?;
    let mut value_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut policy_sum = 0.0;
    for (pi, r) in policies.iter().zip(rewards) {
        let v = policy_value(dyn_, mdp.true_reward(), pi)?;
        let ve_r = policy_value(dyn_, r, &expert)?;
        let v_r = policy_value(dyn_, r, pi)?;
        value_sum += v;
        reward_sum += (ve - v) - (ve_r - v_r);
        policy_sum += ve_r - v_r;
    }
    let k = policies.len() as f64;
    let mixture = value_sum / k;
    let gap = ve - mixture;
    let reward_error = reward_sum / k;
    let policy_error = policy_sum / k;
    Ok(DecompositionReport {
        iterations: policies.len(),
        expert_value: ve,
        mixture_value: mixture,
        gap,
        reward_error,
        policy_error,
        difference: gap - (reward_error + policy_error),
    })
}

/// [`decompose`] over the iterates retained by a finished run.
pub fn error_decomposition_report(
    result: &ExperimentResult,
    true_mdp: &MdpSpec,
) -> Result<DecompositionReport> {
    decompose(true_mdp, &result.policies, &result.rewards)
}
