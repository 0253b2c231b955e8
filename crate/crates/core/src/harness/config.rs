use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilateral::GainProfile;
use crate::dagger::RegimeConfig;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::eval::{EvalGrid, EvalProtocol};
use crate::sim::{ArmModel, TaskId, TaskSpec};

/// Relative output directories are resolved against this variable when set.
pub const OUTPUT_ROOT_VAR: &str = "HANDOVER_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Jsonl]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Settings for `serve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSettings {
    pub listen: String,
    pub physics_hz: f64,
    pub snapshot_hz: f64,
    /// Policy run in autonomous mode; relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// Reset seed of the first episode in every session.
    pub seed: u64,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            physics_hz: 100.0,
            snapshot_hz: 20.0,
            policy: None,
            seed: 0,
        }
    }
}

/// One experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task_id: TaskId,
    /// Overrides the preset horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    /// Evaluation grid file, replacing seeded evaluation; relative to the
    /// config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_grid: Option<PathBuf>,
    pub regime: RegimeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainProfile>,
    #[serde(default)]
    pub serve: ServeSettings,
}

/// A parsed and validated experiment together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Directory that relative paths in the file are resolved against.
    pub base_dir: PathBuf,
    pub eval: EvalProtocol,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Parses without validating. Errors carry `origin:line:col`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let (l, c) = line_col(text, s.start);
                    format!(":{l}:{c}")
                })
                .unwrap_or_default();
            Error::Config(format!("{origin}{at}: {}", e.message()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical serialized form. Where the artifacts go
    /// does not change what is run, so `output_dir` is left out.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&Self {
            output_dir: default_output_dir(),
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn arm_model(&self) -> ArmModel {
        self.arm.clone().unwrap_or_default()
    }

    pub fn task_spec(&self) -> TaskSpec {
        let mut spec = TaskSpec::preset(self.task_id);
        if let Some(h) = self.horizon {
            spec.horizon = h;
        }
        spec
    }

    pub fn env(&self) -> Env {
        Env::new(self.task_spec(), self.arm_model())
    }

    pub fn gain_profile(&self) -> GainProfile {
        self.gains
            .clone()
            .unwrap_or_else(|| GainProfile::defaults_for(&self.arm_model()))
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let arm = self.arm_model();
        arm.validate().map_err(|e| Error::Config(format!("arm: {e}")))?;
        self.task_spec().validate()?;
        self.regime.validate()?;
        let gains = self.gain_profile();
        gains.validate()?;
        for g in [&gains.teleop, &gains.autonomous, &gains.takeover].into_iter().flatten() {
            if g.kp.len() != arm.dof() {
                return Err(Error::Config(format!(
                    "gains: {} joint entries for a {}-joint arm",
                    g.kp.len(),
                    arm.dof()
                )));
            }
        }
        if self.formats.is_empty() {
            return Err(Error::Config("formats: at least one report format is required".into()));
        }
        let s = &self.serve;
        if !(s.physics_hz > 0.0 && s.snapshot_hz > 0.0 && s.snapshot_hz <= s.physics_hz) {
            return Err(Error::Config(
                "serve: rates must be positive with snapshot_hz <= physics_hz".into(),
            ));
        }
        Ok(())
    }

    /// Reads, parses and validates `path`, loading the evaluation grid.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = Self::parse(&text, &path.display().to_string())?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validated(base_dir)
    }

    /// Validates and resolves the evaluation protocol.
    pub fn validated(self, base_dir: PathBuf) -> Result<LoadedConfig> {
        self.validate()?;
        let eval = match &self.eval_grid {
            Some(p) => {
                let grid = EvalGrid::load(&base_dir.join(p)).map_err(|e| Error::Config(format!("eval_grid: {e}")))?;
                grid.worlds(&self.env()).map_err(|e| Error::Config(format!("eval_grid: {e}")))?;
                EvalProtocol::Grid(grid)
            }
            None => self.regime.eval_protocol(),
        };
        Ok(LoadedConfig {
            config: self,
            base_dir,
            eval,
        })
    }
}

impl LoadedConfig {
    /// Output directory after applying [`OUTPUT_ROOT_VAR`].
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.config.output_dir, std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }
}

pub fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}
