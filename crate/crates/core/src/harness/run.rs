//! The adversarial imitation loop, the cloning baseline, and per-iteration metrics.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::{Parameterized, RewardFunction};
use crate::env::make_env;
use crate::error::{invalid, Error, Result};
use crate::mdp::{
    greedy_policy, optimal_q, policy_value, sample_trajectory, Dataset, DatasetRole, MdpSpec,
    Policy, SaTable, Trajectory,
};
use crate::model_based::solve_mb;
use crate::model_free::solve_mf;
use crate::reward::{update_reward, RewardHistory, RewardStrategy};

use super::config::{ExperimentConfig, LearnerKind};
use super::seeds::SeedTree;

/// The true environment behind a counter of sampled episodes. Learners never
/// see it; they only receive the trajectories it hands out.
pub struct Environment<'a> {
    mdp: &'a MdpSpec,
    interactions: u64,
}

impl<'a> Environment<'a> {
    pub fn new(mdp: &'a MdpSpec) -> Self {
        Self {
            mdp,
            interactions: 0,
        }
    }

    pub fn rollout<R: Rng + ?Sized>(&mut self, policy: &Policy, rng: &mut R) -> Result<Trajectory> {
        let t = sample_trajectory(self.mdp.dynamics(), policy, rng)?;
        self.interactions += 1;
        Ok(t)
    }

    pub fn interactions(&self) -> u64 {
        self.interactions
    }
}

/// Deterministic optimal policy of the true MDP, ties to the lowest action.
pub fn expert_policy(mdp: &MdpSpec) -> Policy {
    greedy_policy(&optimal_q(mdp.dynamics(), mdp.true_reward()).expect("spec tables agree"))
}

/// `n` demonstrations of [`expert_policy`].
pub fn collect_expert_demos<R: Rng + ?Sized>(
    mdp: &MdpSpec,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("at least one demonstration is required"));
    }
    let pi = expert_policy(mdp);
    let mut d = Dataset::new(mdp.shape(), DatasetRole::Expert);
    for _ in 0..n {
        d.push(sample_trajectory(mdp.dynamics(), &pi, rng)?)?;
    }
    Ok(d)
}

/// Metrics of the uniform mixture of the first `k` policies.
///
/// With `V^E`, `V^j` under the true reward and `V^E_j`, `V^j_j` under the
/// reward `r^j` that produced policy `j`:
/// `gap = mean(V^E - V^j)`, `policy_error = mean(V^E_j - V^j_j)` and
/// `reward_error = mean((V^E - V^j) - (V^E_j - V^j_j))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub gap: f64,
    pub reward_error: f64,
    pub policy_error: f64,
    /// Average reward-learner regret so far.
    pub eps_r_opt: f64,
    /// Optimization error reported by this iteration's policy solver.
    pub eps_solver_opt: f64,
    pub wall_ms: f64,
}

/// One solver step, tagged with its iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub step: usize,
    pub nll: Option<f64>,
    pub plan_value: Option<f64>,
    pub objective: f64,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub learner: LearnerKind,
    pub mdp: MdpSpec,
    pub expert: Policy,
    pub expert_value: f64,
    pub uniform_value: f64,
    pub records: Vec<IterationRecord>,
    /// `pi^1, ..., pi^K`.
    pub policies: Vec<Policy>,
    /// The rewards the policies were trained against.
    pub rewards: Vec<SaTable>,
    /// True values of the policies.
    pub values: Vec<f64>,
    /// Episodes sampled from the environment by the learner.
    pub interactions: u64,
    pub trace: Vec<TraceRow>,
}

impl ExperimentResult {
    /// Exact value of the uniform mixture over all iterates.
    pub fn mixture_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn final_gap(&self) -> f64 {
        self.expert_value - self.mixture_value()
    }

    /// Gap as a fraction of the uniform policy's gap; 0 when the uniform
    /// policy is already optimal.
    pub fn normalized_gap(&self) -> f64 {
        let denom = self.expert_value - self.uniform_value;
        if denom <= 0.0 {
            0.0
        } else {
            self.final_gap() / denom
        }
    }

    /// Draws one iterate uniformly, as the randomized output policy.
    pub fn sample_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> &Policy {
        &self.policies[rng.random_range(0..self.policies.len())]
    }
}

/// Running sums behind [`IterationRecord`].
#[derive(Default)]
struct Accumulator {
    gap: f64,
    policy: f64,
    reward: f64,
}

struct Evaluator<'a> {
    mdp: &'a MdpSpec,
    expert: &'a Policy,
    expert_value: f64,
}

impl Evaluator<'_> {
    /// `(V^pi, V^E - V^pi, V^E_r - V^pi_r)` on the true dynamics.
    fn terms(&self, pi: &Policy, reward: &SaTable) -> Result<(f64, f64, f64)> {
        let dyn_ = self.mdp.dynamics();
        let v = policy_value(dyn_, self.mdp.true_reward(), pi)?;
        let ve_r = policy_value(dyn_, reward, self.expert)?;
        let v_r = policy_value(dyn_, reward, pi)?;
        Ok((v, self.expert_value - v, ve_r - v_r))
    }
}

struct Setup {
    seeds: SeedTree,
    mdp: MdpSpec,
    expert: Policy,
    expert_value: f64,
    uniform_value: f64,
    demos: Dataset,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed);
    let mdp = make_env(&config.env, &mut seeds.env())?;
    let expert = expert_policy(&mdp);
    let expert_value = policy_value(mdp.dynamics(), mdp.true_reward(), &expert)?;
    let uniform_value = policy_value(
        mdp.dynamics(),
        mdp.true_reward(),
        &Policy::uniform(mdp.shape()),
    )?;
    let demos = collect_expert_demos(&mdp, config.expert_trajectories, &mut seeds.expert())?;
    Ok(Setup {
        seeds,
        mdp,
        expert,
        expert_value,
        uniform_value,
        demos,
    })
}

/// Runs the model-free (`mf`) or model-based (`mb`) learner for `K` iterations.
///
/// Iteration `k` rolls out `pi^{k-1}`, appends the episode to the replay
/// data, updates the reward from the losses seen so far, fits Q-values or a
/// transition model under that reward, and takes the greedy or planned policy.
/// The true MDP is only touched by the rollout counter and the metrics.
pub fn run_imitation(config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.learner == LearnerKind::Bc {
        return Err(Error::Config("run_imitation needs learner mf or mb".into()));
    }
    let Setup {
        seeds,
        mdp,
        expert,
        expert_value,
        uniform_value,
        demos,
    } = setup(config)?;
    let shape = mdp.shape();
    let strategy = config
        .reward
        .unwrap_or_else(|| RewardStrategy::default_ogd(&shape));
    let eval = Evaluator {
        mdp: &mdp,
        expert: &expert,
        expert_value,
    };

    let mut env = Environment::new(&mdp);
    let mut history = RewardHistory::new(demos)?;
    let mut replay = Dataset::new(shape, DatasetRole::Replay);
    let mut policy = Policy::uniform(shape);
    let mut reward = RewardFunction::constant(shape, 0.5);

    let mut records = Vec::with_capacity(config.iterations);
    let mut policies = Vec::with_capacity(config.iterations);
    let mut rewards = Vec::with_capacity(config.iterations);
    let mut values = Vec::with_capacity(config.iterations);
    let mut trace = Vec::new();
    let mut sums = Accumulator::default();

    for k in 1..=config.iterations {
        let started = Instant::now();
        let tau = env.rollout(&policy, &mut seeds.rollout(k - 1))?;
        replay.push(tau.clone())?;
        history.record(tau, reward)?;
        reward = update_reward(&history, &strategy)?;

        let eps_solver = match config.learner {
            LearnerKind::Mf => {
                let mf = crate::model_free::MfSolverConfig {
                    trace: config.solver_trace,
                    ..config.mf.clone()
                };
                let sol = solve_mf(&replay, &reward, &mf)?;
                trace.extend(
                    sol.trace
                        .iter()
                        .enumerate()
                        .map(|(step, &objective)| TraceRow {
                            k,
                            step,
                            nll: None,
                            plan_value: None,
                            objective,
                        }),
                );
                policy = sol.q.greedy_policy();
                sol.eps_opt
            }
            LearnerKind::Mb => {
                let mb = crate::model_based::MbSolverConfig {
                    trace: config.solver_trace,
                    ..config.mb.clone()
                };
                let sol = solve_mb(&replay, &reward, &mb)?;
                trace.extend(sol.trace.iter().enumerate().map(|(step, row)| TraceRow {
                    k,
                    step,
                    nll: Some(row.nll),
                    plan_value: Some(row.plan_value),
                    objective: row.objective,
                }));
                policy = sol.policy;
                sol.eps_opt
            }
            LearnerKind::Bc => unreachable!("rejected above"),
        };

        let r_table = reward.materialize();
        let (v, gap, pol) = eval.terms(&policy, &r_table)?;
        sums.gap += gap;
        sums.policy += pol;
        sums.reward += gap - pol;
        let kf = k as f64;
        records.push(IterationRecord {
            k,
            gap: sums.gap / kf,
            reward_error: sums.reward / kf,
            policy_error: sums.policy / kf,
            eps_r_opt: history.opt_error()?,
            eps_solver_opt: eps_solver,
            wall_ms: if config.record_wall_time {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        policies.push(policy.clone());
        rewards.push(r_table);
        values.push(v);
    }

    Ok(ExperimentResult {
        config: config.clone(),
        learner: config.learner,
        expert,
        expert_value,
        uniform_value,
        records,
        policies,
        rewards,
        values,
        interactions: env.interactions(),
        trace,
        mdp,
    })
}

/// Maximum-likelihood action frequencies of the demonstrations at each
/// visited `(h, s)`, uniform elsewhere.
pub fn behavior_cloning(demos: &Dataset) -> Policy {
    let shape = demos.shape();
    let mut counts = SaTable::zeros(shape);
    for t in demos.trajectories() {
        for (h, st) in t.steps().iter().enumerate() {
            let i = shape.sa_index(h, st.state, st.action);
            counts.values_mut()[i] += 1.0;
        }
    }
    let table = SaTable::from_fn(shape, |h, s, a| {
        let row = counts.row(h, s);
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row[a] / n
        } else {
            1.0 / shape.actions as f64
        }
    });
    Policy::new(table).expect("frequencies are distributions")
}

/// Behavioral cloning with the same environment and demonstrations as the
/// matching imitation run. Uses no environment episodes.
///
/// The result has a single record scored against the true reward, so its
/// reward error is zero and its policy error equals the gap.
pub fn run_bc(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let started = Instant::now();
    let Setup {
        mdp,
        expert,
        expert_value,
        uniform_value,
        demos,
        ..
    } = setup(config)?;
    let env = Environment::new(&mdp);
    let policy = behavior_cloning(&demos);
    let eval = Evaluator {
        mdp: &mdp,
        expert: &expert,
        expert_value,
    };
    let (v, gap, pol) = eval.terms(&policy, mdp.true_reward())?;
    let record = IterationRecord {
        k: 1,
        gap,
        reward_error: gap - pol,
        policy_error: pol,
        eps_r_opt: 0.0,
        eps_solver_opt: 0.0,
        wall_ms: if config.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    };
    Ok(ExperimentResult {
        config: config.clone(),
        learner: LearnerKind::Bc,
        expert,
        expert_value,
        uniform_value,
        records: vec![record],
        policies: vec![policy],
        rewards: vec![mdp.true_reward().clone()],
        values: vec![v],
        interactions: env.interactions(),
        trace: Vec::new(),
        mdp,
    })
}

/// Dispatches on the configured learner.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config.learner {
        LearnerKind::Bc => run_bc(config),
        _ => run_imitation(config),
    }
}

/// Runs one replica per seed `config.seed + i`, in parallel.
pub fn run_sweep(config: &ExperimentConfig, seeds: usize) -> Result<Vec<ExperimentResult>> {
    use rayon::prelude::*;
    if seeds == 0 {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    (0..seeds as u64)
        .into_par_iter()
        .map(|i| {
            let c = ExperimentConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            run_experiment(&c)
        })
        .collect()
}
