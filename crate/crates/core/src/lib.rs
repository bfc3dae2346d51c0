//! Adversarial imitation learning on finite episodic MDPs.
//!
//! The reward is learned online with a no-regret rule against the expert
//! demonstrations, and the policy is learned by optimism-regularized
//! optimization: either Bellman-error minimization over Q-values followed by a
//! greedy policy ([`model_free`]) or maximum likelihood over transition models
//! followed by planning ([`model_based`]). Everything is exact at desk scale,
//! so the error decomposition of the imitation gap can be checked to machine
//! precision.

pub mod classes;
pub mod env;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod model_based;
pub mod model_free;
pub mod reward;

pub use classes::{
    ClassKind, FeatureMap, Parameterized, QFunction, RewardFunction, TransitionModel,
};
pub use env::{make_env, EnvDocument, EnvParams};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentResult, LearnerKind};
pub use mdp::{
    Dataset, DatasetRole, Dynamics, EnvShape, MdpSpec, Policy, SaTable, Step, Trajectory,
    TransitionCounts,
};
pub use model_based::{solve_mb, MbSolution, MbSolverConfig};
pub use model_free::{solve_mf, MfSolution, MfSolverConfig};
