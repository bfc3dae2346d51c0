//! End-to-end experiments: environment setup, expert demonstrations, the
//! learner loop, baselines, exact diagnostics and result files.

pub mod config;
pub mod diagnostics;
pub mod output;
pub mod run;
pub mod seeds;

pub use config::{ExperimentConfig, LearnerKind};
pub use diagnostics::{decompose, error_decomposition_report, DecompositionReport};
pub use output::{diagnose, write_result, write_sweep, Aggregate, Diagnosis, Summary};
pub use run::{
    behavior_cloning, collect_expert_demos, expert_policy, run_bc, run_experiment, run_imitation,
    run_sweep, Environment, ExperimentResult, IterationRecord,
};
pub use seeds::SeedTree;
