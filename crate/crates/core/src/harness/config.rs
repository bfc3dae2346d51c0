//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::model_based::MbSolverConfig;
use crate::model_free::MfSolverConfig;
use crate::reward::RewardStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Bellman-error minimization with a greedy policy.
    Mf,
    /// Likelihood fit of a transition model with planning.
    Mb,
    /// Behavioral cloning of the demonstrations.
    Bc,
}

impl LearnerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearnerKind::Mf => "mf",
            LearnerKind::Mb => "mb",
            LearnerKind::Bc => "bc",
        }
    }
}

fn yes() -> bool {
    true
}

/// One experiment: environment, data budget, learner and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvParams,
    /// Number of expert demonstrations `N`.
    pub expert_trajectories: usize,
    /// Number of learner iterations `K`, one environment episode each.
    pub iterations: usize,
    pub learner: LearnerKind,
    /// Defaults to online gradient descent with step scale `horizon`.
    #[serde(default)]
    pub reward: Option<RewardStrategy>,
    #[serde(default)]
    pub mf: MfSolverConfig,
    #[serde(default)]
    pub mb: MbSolverConfig,
    /// Master seed; every random draw of the run derives from it.
    pub seed: u64,
    /// Result directory; the command line can override it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fill the `wall_ms` column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Write per-iteration policies and rewards for later diagnosis.
    #[serde(default = "yes")]
    pub save_artifacts: bool,
    /// Write the per-step objective of every solver call.
    #[serde(default)]
    pub solver_trace: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.expert_trajectories == 0 {
            return Err(Error::Config(
                "expert_trajectories must be at least 1".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.mf.validate()?;
        self.mb.validate()?;
        if let Some(strategy) = &self.reward {
            strategy
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}
