//! Shared fixtures for the benchmarks.

use imlab::mdp::sample_trajectory;
use imlab::{make_env, Dataset, DatasetRole, EnvParams, MdpSpec, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The 25-state cliff corridor used by the end-to-end runs.
pub fn cliff() -> MdpSpec {
    let params = EnvParams::CliffGrid {
        width: 24,
        actions: 4,
        horizon: 20,
        slip: 0.0,
        goal: Some(9),
        safe: None,
    };
    make_env(&params, &mut ChaCha8Rng::seed_from_u64(0)).expect("valid params")
}

pub fn random_mdp(states: usize, actions: usize, horizon: usize) -> MdpSpec {
    let params = EnvParams::Random {
        states,
        actions,
        horizon,
    };
    make_env(&params, &mut ChaCha8Rng::seed_from_u64(1)).expect("valid params")
}

/// `n` uniform-policy episodes.
pub fn replay(mdp: &MdpSpec, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pi = Policy::uniform(mdp.shape());
    let mut d = Dataset::new(mdp.shape(), DatasetRole::Replay);
    for _ in 0..n {
        d.push(sample_trajectory(mdp.dynamics(), &pi, &mut rng).expect("shapes agree"))
            .expect("valid");
    }
    d
}
