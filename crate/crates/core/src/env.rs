//! Benchmark environment factory and the flat text document format for
//! checking environments into a repository.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{Dynamics, EnvShape, MdpSpec, SaTable};

/// Environment family plus its sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvParams {
    /// Action 1 advances one state (clamped at the end) and pays 1; every
    /// other action stays put and pays 0.
    Chain {
        states: usize,
        actions: usize,
        horizon: usize,
    },
    /// A corridor of `width` columns plus one absorbing cliff state (index
    /// `width`). Each column has one safe action, which advances toward
    /// `goal` (failing to move with probability `slip`); every other action
    /// falls off. Being at the goal column pays 1 per step, and the goal is
    /// absorbing under its safe action. Safe actions are drawn uniformly
    /// unless listed.
    CliffGrid {
        width: usize,
        actions: usize,
        horizon: usize,
        #[serde(default)]
        slip: f64,
        #[serde(default)]
        goal: Option<usize>,
        #[serde(default)]
        safe: Option<Vec<usize>>,
    },
    /// One correct action per step; any mistake drops into an absorbing fail
    /// state. Only the correct final action pays 1.
    ComboLock {
        horizon: usize,
        actions: usize,
        #[serde(default)]
        combination: Option<Vec<usize>>,
    },
    /// Dirichlet(1) transition rows and Uniform[0, 1] rewards.
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
    },
}

impl EnvParams {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvParams::Chain { .. } => "chain",
            EnvParams::CliffGrid { .. } => "cliff_grid",
            EnvParams::ComboLock { .. } => "combo_lock",
            EnvParams::Random { .. } => "random",
        }
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Builds a validated environment. `rng` is only consumed by the randomized
/// families: `random`, plus `cliff_grid` and `combo_lock` when their action
/// layout is not given.
pub fn make_env<R: Rng + ?Sized>(params: &EnvParams, rng: &mut R) -> Result<MdpSpec> {
    match *params {
        EnvParams::Chain {
            states,
            actions,
            horizon,
        } => {
            if actions < 2 {
                return Err(invalid("chain needs at least 2 actions"));
            }
            let shape = EnvShape::new(states, actions, horizon, 0)?;
            let dynamics = Dynamics::from_rows(shape, |_, s, a| {
                let next = if a == 1 { (s + 1).min(states - 1) } else { s };
                one_hot(states, next)
            })?;
            let reward = SaTable::from_fn(shape, |_, _, a| if a == 1 { 1.0 } else { 0.0 });
            MdpSpec::new(dynamics, reward)
        }
        EnvParams::CliffGrid {
            width,
            actions,
            horizon,
            slip,
            goal,
            ref safe,
        } => {
            if width == 0 || actions < 2 {
                return Err(invalid(
                    "cliff_grid needs width >= 1 and at least 2 actions",
                ));
            }
            if !(0.0..1.0).contains(&slip) {
                return Err(invalid(format!("cliff_grid slip {slip} outside [0, 1)")));
            }
            let goal = goal.unwrap_or(width - 1);
            if goal >= width {
                return Err(invalid(format!(
                    "cliff_grid goal {goal} outside the corridor"
                )));
            }
            let safe: Vec<usize> = match safe {
                Some(v) => {
                    if v.len() != width || v.iter().any(|&a| a >= actions) {
                        return Err(invalid(
                            "cliff_grid safe actions must list one valid action per column",
                        ));
                    }
                    v.clone()
                }
                None => (0..width).map(|_| rng.random_range(0..actions)).collect(),
            };
            let states = width + 1;
            let cliff = width;
            let shape = EnvShape::new(states, actions, horizon, 0)?;
            let dynamics = Dynamics::from_rows(shape, |_, s, a| {
                if s == cliff || a != safe[s] {
                    return one_hot(states, cliff);
                }
                let forward = if s < goal { s + 1 } else { s };
                let mut row = vec![0.0; states];
                row[forward] += 1.0 - slip;
                row[s] += slip;
                row
            })?;
            let reward = SaTable::from_fn(shape, |_, s, _| if s == goal { 1.0 } else { 0.0 });
            MdpSpec::new(dynamics, reward)
        }
        EnvParams::ComboLock {
            horizon,
            actions,
            ref combination,
        } => {
            if actions < 2 {
                return Err(invalid("combo_lock needs at least 2 actions"));
            }
            let combo: Vec<usize> = match combination {
                Some(c) => {
                    if c.len() != horizon || c.iter().any(|&a| a >= actions) {
                        return Err(invalid(
                            "combo_lock combination must list one valid action per step",
                        ));
                    }
                    c.clone()
                }
                None => (0..horizon).map(|_| rng.random_range(0..actions)).collect(),
            };
            let shape = EnvShape::new(2, actions, horizon, 0)?;
            let dynamics = Dynamics::from_rows(shape, |h, s, a| {
                let next = if s == 0 && a == combo[h] { 0 } else { 1 };
                one_hot(2, next)
            })?;
            let reward = SaTable::from_fn(shape, |h, s, a| {
                if h + 1 == horizon && s == 0 && a == combo[h] {
                    1.0
                } else {
                    0.0
                }
            });
            MdpSpec::new(dynamics, reward)
        }
        EnvParams::Random {
            states,
            actions,
            horizon,
        } => {
            let shape = EnvShape::new(states, actions, horizon, 0)?;
            let mut probs = Vec::with_capacity(shape.sas_len());
            for _ in 0..shape.sa_len() {
                let draws: Vec<f64> = (0..states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = draws.iter().sum();
                probs.extend(draws.iter().map(|x| x / total));
            }
            let dynamics = Dynamics::new(shape, probs)?;
            let rewards = (0..shape.sa_len()).map(|_| rng.random::<f64>()).collect();
            MdpSpec::new(dynamics, SaTable::new(shape, rewards)?)
        }
    }
}

/// Two states, two actions, horizon two: action 1 moves `0 -> 1` and pays 1.
pub fn fix_chain() -> MdpSpec {
    let params = EnvParams::Chain {
        states: 2,
        actions: 2,
        horizon: 2,
    };
    make_env(
        &params,
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    )
    .expect("fixed chain is valid")
}

/// Flat serialized environment. `transitions` is row-major over
/// `(h, s, a, s')`, `rewards` over `(h, s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDocument {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl From<&MdpSpec> for EnvDocument {
    fn from(m: &MdpSpec) -> Self {
        let shape = m.shape();
        EnvDocument {
            states: shape.states,
            actions: shape.actions,
            horizon: shape.horizon,
            initial_state: shape.initial_state,
            transitions: m.dynamics().probs().to_vec(),
            rewards: m.true_reward().values().to_vec(),
        }
    }
}

impl EnvDocument {
    pub fn into_mdp(self) -> Result<MdpSpec> {
        let shape = EnvShape::new(self.states, self.actions, self.horizon, self.initial_state)?;
        let dynamics = Dynamics::new(shape, self.transitions)?;
        MdpSpec::new(dynamics, SaTable::new(shape, self.rewards)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_value, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fix_chain_layout() {
        let m = fix_chain();
        let shape = m.shape();
        assert_eq!(
            (
                shape.states,
                shape.actions,
                shape.horizon,
                shape.initial_state
            ),
            (2, 2, 2, 0)
        );
        assert_eq!(m.dynamics().row(0, 0, 1), &[0.0, 1.0]);
        assert_eq!(m.dynamics().row(0, 0, 0), &[1.0, 0.0]);
        assert_eq!(m.dynamics().row(1, 1, 1), &[0.0, 1.0]);
        assert_eq!(
            m.true_reward().values(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    /// Enumerates all `A^H` open-loop action sequences on the deterministic lock.
    #[test]
    fn combo_lock_values_by_enumeration() {
        let params = EnvParams::ComboLock {
            horizon: 6,
            actions: 2,
            combination: None,
        };
        let m = make_env(&params, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let shape = m.shape();
        let mut paying = 0usize;
        let mut total = 0usize;
        for code in 0..(1usize << 6) {
            let mut s = 0;
            let mut ret = 0.0;
            for h in 0..6 {
                let a = (code >> h) & 1;
                ret += m.true_reward().get(h, s, a);
                s = m
                    .dynamics()
                    .row(h, s, a)
                    .iter()
                    .position(|&p| p == 1.0)
                    .unwrap();
            }
            total += 1;
            if ret == 1.0 {
                paying += 1;
            }
        }
        assert_eq!((paying, total), (1, 64));
        let uniform = policy_value(m.dynamics(), m.true_reward(), &Policy::uniform(shape)).unwrap();
        assert!((uniform - 1.0 / 64.0).abs() < 1e-15);
        let best = crate::mdp::greedy_policy(
            &crate::mdp::optimal_q(m.dynamics(), m.true_reward()).unwrap(),
        );
        assert_eq!(
            policy_value(m.dynamics(), m.true_reward(), &best).unwrap(),
            1.0
        );
    }

    #[test]
    fn random_env_is_seed_deterministic() {
        let p = EnvParams::Random {
            states: 5,
            actions: 3,
            horizon: 4,
        };
        let a = make_env(&p, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let b = make_env(&p, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cliff_grid_structure() {
        let p = EnvParams::CliffGrid {
            width: 4,
            actions: 3,
            horizon: 6,
            slip: 0.25,
            goal: Some(2),
            safe: Some(vec![0; 4]),
        };
        let m = make_env(&p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.shape().states, 5);
        assert_eq!(m.dynamics().row(0, 0, 0), &[0.25, 0.75, 0.0, 0.0, 0.0]);
        assert_eq!(m.dynamics().row(0, 1, 2), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.dynamics().row(3, 2, 0), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.dynamics().row(3, 4, 0), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.true_reward().get(5, 2, 1), 1.0);
        assert_eq!(m.true_reward().get(5, 4, 0), 0.0);

        // drawn layout: reaching column 3 takes 3 steps, then 3 paid steps remain
        let p = EnvParams::CliffGrid {
            width: 5,
            actions: 4,
            horizon: 6,
            slip: 0.0,
            goal: Some(3),
            safe: None,
        };
        let m = make_env(&p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let q = crate::mdp::optimal_q(m.dynamics(), m.true_reward()).unwrap();
        assert_eq!(q.argmax(0, 0).1, 3.0);
    }

    #[test]
    fn bad_params_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = [
            EnvParams::Chain {
                states: 2,
                actions: 1,
                horizon: 2,
            },
            EnvParams::CliffGrid {
                width: 3,
                actions: 4,
                horizon: 5,
                slip: 1.0,
                goal: None,
                safe: None,
            },
            EnvParams::CliffGrid {
                width: 3,
                actions: 4,
                horizon: 5,
                slip: 0.0,
                goal: Some(3),
                safe: None,
            },
            EnvParams::CliffGrid {
                width: 3,
                actions: 4,
                horizon: 5,
                slip: 0.0,
                goal: None,
                safe: Some(vec![0, 4, 1]),
            },
            EnvParams::ComboLock {
                horizon: 3,
                actions: 2,
                combination: Some(vec![0, 2, 1]),
            },
            EnvParams::Random {
                states: 0,
                actions: 2,
                horizon: 2,
            },
        ];
        for p in &bad {
            assert!(make_env(p, &mut rng).is_err(), "{p:?}");
        }
    }

    #[test]
    fn document_round_trip() {
        let m = make_env(
            &EnvParams::Random {
                states: 3,
                actions: 2,
                horizon: 3,
            },
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let text = EnvDocument::from(&m).to_json();
        let back = EnvDocument::from_json(&text).unwrap().into_mdp().unwrap();
        assert_eq!(m, back);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "states",
            "actions",
            "horizon",
            "initial_state",
            "transitions",
            "rewards",
        ] {
            assert!(parsed.get(key).is_some(), "missing key {key}");
        }
    }
}
