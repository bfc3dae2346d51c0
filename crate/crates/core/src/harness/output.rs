//! Result files and their readers.
//!
//! A result directory holds `metrics.csv` (one row per iteration),
//! `summary.json`, and optionally `artifacts.json` (environment and
//! per-iteration policies and rewards) and `solver_trace.csv`. The JSON files
//! carry a `schema_version`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvDocument;
use crate::error::{Error, Result};
use crate::mdp::{EnvShape, Policy, SaTable};

use super::config::{ExperimentConfig, LearnerKind};
use super::diagnostics::{decompose, DecompositionReport, IDENTITY_TOL};
use super::run::{ExperimentResult, IterationRecord};

pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ARTIFACTS_FILE: &str = "artifacts.json";
pub const TRACE_FILE: &str = "solver_trace.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub learner: LearnerKind,
    pub config: ExperimentConfig,
    pub iterations: usize,
    pub interactions: u64,
    pub expert_value: f64,
    pub uniform_value: f64,
    pub mixture_value: f64,
    pub final_gap: f64,
    pub normalized_gap: f64,
    pub final_reward_error: f64,
    pub final_policy_error: f64,
    pub final_eps_r_opt: f64,
    pub max_eps_solver_opt: f64,
    pub total_wall_ms: f64,
}

impl Summary {
    pub fn of(result: &ExperimentResult) -> Self {
        let last = result
            .records
            .last()
            .expect("a run has at least one record");
        Summary {
            schema_version: SCHEMA_VERSION,
            learner: result.learner,
            config: result.config.clone(),
            iterations: result.records.len(),
            interactions: result.interactions,
            expert_value: result.expert_value,
            uniform_value: result.uniform_value,
            mixture_value: result.mixture_value(),
            final_gap: result.final_gap(),
            normalized_gap: result.normalized_gap(),
            final_reward_error: last.reward_error,
            final_policy_error: last.policy_error,
            final_eps_r_opt: last.eps_r_opt,
            max_eps_solver_opt: result
                .records
                .iter()
                .map(|r| r.eps_solver_opt)
                .fold(0.0, f64::max),
            total_wall_ms: result.records.iter().map(|r| r.wall_ms).sum(),
        }
    }
}

/// A policy in the artifact file; greedy policies are stored as action lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRecord {
    /// Action per `(h, s)`, row-major.
    Deterministic(Vec<usize>),
    /// Probabilities per `(h, s, a)`, row-major.
    Stochastic(Vec<f64>),
}

impl PolicyRecord {
    pub fn of(policy: &Policy) -> Self {
        match policy.as_deterministic() {
            Some(actions) => PolicyRecord::Deterministic(actions),
            None => PolicyRecord::Stochastic(policy.table().values().to_vec()),
        }
    }

    pub fn into_policy(self, shape: EnvShape) -> Result<Policy> {
        match self {
            PolicyRecord::Deterministic(actions) => Policy::deterministic(shape, &actions),
            PolicyRecord::Stochastic(probs) => Policy::new(SaTable::new(shape, probs)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub schema_version: u32,
    pub learner: LearnerKind,
    pub env: EnvDocument,
    pub policies: Vec<PolicyRecord>,
    /// Reward tables, row-major over `(h, s, a)`.
    pub rewards: Vec<Vec<f64>>,
}

impl Artifacts {
    pub fn of(result: &ExperimentResult) -> Self {
        Artifacts {
            schema_version: SCHEMA_VERSION,
            learner: result.learner,
            env: EnvDocument::from(&result.mdp),
            policies: result.policies.iter().map(PolicyRecord::of).collect(),
            rewards: result.rewards.iter().map(|r| r.values().to_vec()).collect(),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Serialized metrics table.
pub fn metrics_csv(records: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes every result file into `dir`, creating it if needed.
pub fn write_result(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&result.records)?)?;
    let summary = serde_json::to_string_pretty(&Summary::of(result))?;
    fs::write(dir.join(SUMMARY_FILE), summary + "\n")?;
    if result.config.save_artifacts {
        fs::write(
            dir.join(ARTIFACTS_FILE),
            serde_json::to_string(&Artifacts::of(result))?,
        )?;
    }
    if !result.trace.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &result.trace {
            w.serialize(row).map_err(csv_error)?;
        }
        fs::write(
            dir.join(TRACE_FILE),
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
        )?;
    }
    Ok(())
}

pub fn read_metrics(dir: &Path) -> Result<Vec<IterationRecord>> {
    let path = dir.join(METRICS_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifacts(format!(
            "{} not found",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(&path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifacts(format!(
            "{} not found",
            path.display()
        )));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_artifacts(dir: &Path) -> Result<Artifacts> {
    let path = dir.join(ARTIFACTS_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifacts(format!(
            "{} not found; rerun with \"save_artifacts\": true",
            path.display()
        )));
    }
    let a: Artifacts = serde_json::from_str(&fs::read_to_string(path)?)?;
    if a.schema_version != SCHEMA_VERSION {
        return Err(Error::MissingArtifacts(format!(
            "unsupported artifact schema {}",
            a.schema_version
        )));
    }
    Ok(a)
}

/// Outcome of [`diagnose`].
#[derive(Clone, Debug)]
pub struct Diagnosis {
    pub report: DecompositionReport,
    /// Largest disagreement between the recomputed and the recorded final gap,
    /// reward error and policy error.
    pub recorded_mismatch: f64,
    /// `(k, eps_r_opt)` at roughly log-spaced iterations.
    pub regret_curve: Vec<(usize, f64)>,
    /// Least-squares slope of `log eps_r_opt` against `log k` over the curve.
    pub regret_slope: Option<f64>,
}

impl Diagnosis {
    pub fn passed(&self) -> bool {
        self.report.holds() && self.recorded_mismatch <= IDENTITY_TOL
    }
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}", self.report)?;
        writeln!(f, "recorded vs recomputed {:.3e}", self.recorded_mismatch)?;
        writeln!(f, "reward regret curve:")?;
        for (k, e) in &self.regret_curve {
            writeln!(f, "  k={k:<8} eps_r_opt={e:.6}")?;
        }
        match self.regret_slope {
            Some(s) => write!(f, "log-log slope {s:.3}"),
            None => write!(f, "log-log slope n/a"),
        }
    }
}

/// Log-log least-squares slope of positive `(x, y)` points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Recomputes the decomposition from the artifacts in `dir` and checks it
/// against the identity and against the recorded final metrics.
pub fn diagnose(dir: &Path) -> Result<Diagnosis> {
    let records = read_metrics(dir)?;
    let artifacts = read_artifacts(dir)?;
    let mdp = artifacts.env.into_mdp()?;
    let shape = mdp.shape();
    let policies = artifacts
        .policies
        .into_iter()
        .map(|p| p.into_policy(shape))
        .collect::<Result<Vec<_>>>()?;
    let rewards = artifacts
        .rewards
        .into_iter()
        .map(|r| SaTable::new(shape, r))
        .collect::<Result<Vec<_>>>()?;
    let report = decompose(&mdp, &policies, &rewards)?;
    let last = records
        .last()
        .ok_or_else(|| Error::MissingArtifacts("metrics file has no rows".into()))?;
    let recorded_mismatch = [
        (report.gap - last.gap).abs(),
        (report.reward_error - last.reward_error).abs(),
        (report.policy_error - last.policy_error).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut regret_curve = Vec::new();
    let mut k = 1;
    while k <= records.len() {
        regret_curve.push((k, records[k - 1].eps_r_opt));
        k *= 2;
    }
    if regret_curve.last().map(|p| p.0) != Some(records.len()) {
        regret_curve.push((records.len(), last.eps_r_opt));
    }
    let regret_slope = loglog_slope(
        &regret_curve
            .iter()
            .map(|&(k, e)| (k as f64, e))
            .collect::<Vec<_>>(),
    );
    Ok(Diagnosis {
        report,
        recorded_mismatch,
        regret_curve,
        regret_slope,
    })
}

/// Medians across replicas of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub learner: LearnerKind,
    pub seeds: Vec<u64>,
    pub median_final_gap: f64,
    pub median_normalized_gap: f64,
    pub median_reward_error: f64,
    pub median_policy_error: f64,
    pub median_eps_r_opt: f64,
    pub final_gaps: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Aggregate {
    pub fn of(results: &[ExperimentResult]) -> Self {
        let pick = |f: &dyn Fn(&ExperimentResult) -> f64| {
            median(&results.iter().map(f).collect::<Vec<_>>())
        };
        let last = |r: &ExperimentResult| *r.records.last().expect("non-empty run");
        Aggregate {
            schema_version: SCHEMA_VERSION,
            learner: results[0].learner,
            seeds: results.iter().map(|r| r.config.seed).collect(),
            median_final_gap: pick(&|r| r.final_gap()),
            median_normalized_gap: pick(&|r| r.normalized_gap()),
            median_reward_error: pick(&|r| last(r).reward_error),
            median_policy_error: pick(&|r| last(r).policy_error),
            median_eps_r_opt: pick(&|r| last(r).eps_r_opt),
            final_gaps: results.iter().map(|r| r.final_gap()).collect(),
        }
    }
}

/// Writes each replica to `dir/seed-<seed>/` and the medians to `dir/aggregate.json`.
pub fn write_sweep(results: &[ExperimentResult], dir: &Path) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    fs::create_dir_all(dir)?;
    for r in results {
        write_result(r, &dir.join(format!("seed-{}", r.config.seed)))?;
    }
    let agg = Aggregate::of(results);
    fs::write(
        dir.join("aggregate.json"),
        serde_json::to_string_pretty(&agg)? + "\n",
    )?;
    Ok(agg)
}
