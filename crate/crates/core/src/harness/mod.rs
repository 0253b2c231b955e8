//! Experiment files, report tables and the operations behind the CLI.

mod compare;
mod config;
mod report;

pub use compare::*;
pub use config::*;
pub use report::*;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dagger::{run_regime_tracked, IterationRow, Progress, Regime, RunOptions};
use crate::dataset::{self, DatasetManifest, DATASET_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSummary};
use crate::policy::{load_policy, save_policy};
use crate::sim::TaskId;

pub const RUN_MANIFEST: &str = "manifest.json";
pub const RUN_MANIFEST_VERSION: u32 = 1;

/// `manifest.json` in a run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub task_id: TaskId,
    pub regime: Regime,
    pub master_seed: u64,
    pub eval_protocol: String,
    /// True when the run stopped early; the other artifacts hold whatever
    /// was finished.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File names written next to the manifest.
    pub artifacts: Vec<String>,
}

/// Why `run` did not succeed.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Nothing was executed.
    #[error("{0}")]
    Config(Error),
    /// Execution started; partial artifacts are in `output_dir`.
    #[error("{error} (partial artifacts in {})", output_dir.display())]
    Runtime { error: Error, output_dir: PathBuf },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime { .. } => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub report: RegimeReport,
    pub manifest: RunManifest,
}

fn log_row(r: &IterationRow) {
    log::info!(
        "iteration {}: dataset {} intervention {:.3} success {:?} ({:.1}s)",
        r.iteration,
        r.dataset_size,
        r.intervention_fraction,
        r.subtask_success,
        r.wall_clock_s
    );
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Loads `path` and runs it.
pub fn run_file(path: &Path, workers: usize) -> Result<RunSummary, RunError> {
    let loaded = ExperimentConfig::load(path).map_err(RunError::Config)?;
    run(&loaded, workers)
}

/// Runs a loaded experiment and writes its artifacts.
pub fn run(loaded: &LoadedConfig, workers: usize) -> Result<RunSummary, RunError> {
    let out = loaded.output_dir();
    let runtime = |error| RunError::Runtime {
        error,
        output_dir: out.clone(),
    };
    std::fs::create_dir_all(&out).map_err(|e| runtime(Error::io(&out, e)))?;

    let cfg = &loaded.config;
    let env = cfg.env();
    let options = RunOptions {
        workers,
        eval: Some(loaded.eval.clone()),
        progress: Some(log_row),
    };
    let mut progress = Progress::default();
    let result = run_regime_tracked(&cfg.regime, &env, &options, &mut progress);

    let header = ReportHeader {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        task_id: cfg.task_id,
        regime: cfg.regime.regime,
        master_seed: cfg.regime.master_seed,
        eval_protocol: loaded.eval.describe(),
        subtasks: env.spec.subtask_names.clone(),
        warmup_retries: progress.warmup.as_ref().map_or(0, |w| w.retries),
    };
    let (report, dataset, policy, error) = match result {
        Ok(run) => (
            RegimeReport {
                header,
                rows: run.rows,
            },
            run.dataset,
            Some(run.policy),
            None,
        ),
        Err(e) => (
            RegimeReport {
                header,
                rows: progress.rows,
            },
            progress.dataset,
            None,
            Some(e),
        ),
    };

    let written = write_artifacts(&out, loaded, &report, &dataset, policy.as_ref(), error.as_ref());
    match (written, error) {
        (Ok(manifest), None) => Ok(RunSummary {
            output_dir: out,
            report,
            manifest,
        }),
        (_, Some(e)) | (Err(e), None) => Err(runtime(e)),
    }
}

fn write_artifacts(
    out: &Path,
    loaded: &LoadedConfig,
    report: &RegimeReport,
    data: &crate::dataset::Dataset,
    policy: Option<&crate::policy::Policy>,
    error: Option<&Error>,
) -> Result<RunManifest> {
    let cfg = &loaded.config;
    let mut artifacts = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        write(&out.join(name), body)?;
        artifacts.push(name.to_string());
        Ok(())
    };
    put("config.toml", &cfg.to_toml())?;
    for f in &cfg.formats {
        match f {
            ReportFormat::Csv => put("report.csv", &report.to_csv())?,
            ReportFormat::Jsonl => put("report.jsonl", &report.to_jsonl())?,
        }
    }
    if !data.is_empty() {
        let ds_manifest = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            task_id: cfg.task_id,
            task_spec_hash: dataset::task_spec_hash(&cfg.task_spec()),
            config_hash: report.header.config_hash.clone(),
            master_seed: cfg.regime.master_seed,
            transitions: data.len(),
            episodes: data.episodes(),
            partial: error.is_some(),
        };
        dataset::save(&out.join("dataset.jsonl"), data, &ds_manifest)?;
        artifacts.push("dataset.jsonl".into());
        artifacts.push("dataset.manifest.json".into());
    }
    if let Some(p) = policy {
        save_policy(&out.join("policy.pol"), p)?;
        artifacts.push("policy.pol".into());
    }
    let manifest = RunManifest {
        schema_version: RUN_MANIFEST_VERSION,
        config_hash: report.header.config_hash.clone(),
        task_id: cfg.task_id,
        regime: cfg.regime.regime,
        master_seed: cfg.regime.master_seed,
        eval_protocol: report.header.eval_protocol.clone(),
        partial: error.is_some(),
        error: error.map(|e| e.to_string()),
        artifacts,
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&out.join(RUN_MANIFEST), &body)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(RUN_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Evaluates a saved policy under an experiment's task and protocol.
pub fn eval_policy(policy_path: &Path, loaded: &LoadedConfig, workers: usize) -> Result<EvalSummary> {
    let policy = load_policy(policy_path)?;
    let env = loaded.config.env();
    if policy.obs_dim != env.obs_dim() || policy.act_dim != env.action_dim() {
        return Err(Error::Config(format!(
            "{} maps {} observations to {} actions; {} needs {} to {}",
            policy_path.display(),
            policy.obs_dim,
            policy.act_dim,
            env.task(),
            env.obs_dim(),
            env.action_dim()
        )));
    }
    evaluate(&policy, &env, &loaded.eval, workers)
}
