//! Transitions, the aggregated training dataset and its on-disk form.
//!
//! Datasets are stored as UTF-8 JSON lines, one transition per line, with a
//! `<name>.manifest.json` sidecar recording the schema version, the task
//! hash and the seeds that produced the data.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilateral::Mode;
use crate::error::{Error, Result};
use crate::sim::{TaskId, TaskSpec};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Human,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub episode: usize,
    pub step: usize,
    pub task_id: TaskId,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub source: Source,
    pub mode_at_step: Mode,
}

/// The training set `D`. Only human-labeled transitions can enter it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.source != Source::Human {
            return Err(Error::Format(format!(
                "policy-sourced transition (episode {}, step {}) cannot enter the dataset",
                t.episode, t.step
            )));
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) -> Result<()> {
        ts.into_iter().try_for_each(|t| self.push(t))
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episodes(&self) -> usize {
        let mut ids: Vec<usize> = self.transitions.iter().map(|t| t.episode).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn to_jsonl(&self) -> String {
        write_jsonl(&self.transitions)
    }
}

impl TryFrom<Vec<Transition>> for Dataset {
    type Error = Error;

    fn try_from(ts: Vec<Transition>) -> Result<Self> {
        let mut d = Dataset::new();
        d.extend(ts)?;
        Ok(d)
    }
}

/// One JSON object per line, each line terminated by `\n`.
pub fn write_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("rows serialize"));
        out.push('\n');
    }
    out
}

pub fn read_transitions(path: &Path) -> Result<Vec<Transition>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub task_id: TaskId,
    pub task_spec_hash: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub transitions: usize,
    pub episodes: usize,
    /// Set when the run producing this file did not finish.
    #[serde(default)]
    pub partial: bool,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

/// SHA-256 of the canonical JSON form of a task spec.
pub fn task_spec_hash(spec: &TaskSpec) -> String {
    let canonical = serde_json::to_vec(spec).expect("task spec serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub fn save(
    path: &Path,
    dataset: &Dataset,
    manifest: &DatasetManifest,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(dataset.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&mpath, body + "\n").map_err(|e| Error::io(&mpath, e))
}

/// Summary printed by `dataset inspect`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub transitions: usize,
    pub episodes: usize,
    pub human: usize,
    pub policy: usize,
    pub tasks: Vec<TaskId>,
    pub obs_dim: Option<usize>,
    pub action_dim: Option<usize>,
}

pub fn summarize(ts: &[Transition]) -> DatasetSummary {
    let mut tasks: Vec<TaskId> = ts.iter().map(|t| t.task_id).collect();
    tasks.sort_by_key(|t| t.name());
    tasks.dedup();
    let mut eps: Vec<usize> = ts.iter().map(|t| t.episode).collect();
    eps.sort_unstable();
    eps.dedup();
    DatasetSummary {
        transitions: ts.len(),
        episodes: eps.len(),
        human: ts.iter().filter(|t| t.source == Source::Human).count(),
        policy: ts.iter().filter(|t| t.source == Source::Policy).count(),
        tasks,
        obs_dim: ts.first().map(|t| t.obs.len()),
        action_dim: ts.first().map(|t| t.action.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(source: Source, episode: usize) -> Transition {
        Transition {
            episode,
            step: 0,
            task_id: TaskId::Reach2d,
            obs: vec![0.1, -2.5e-7],
            action: vec![0.05, 1.0 / 3.0],
            source,
            mode_at_step: Mode::Teleop,
        }
    }

    #[test]
    fn policy_transitions_rejected() {
        let mut d = Dataset::new();
        d.push(t(Source::Human, 0)).unwrap();
        assert!(d.push(t(Source::Policy, 0)).is_err());
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let d = Dataset::try_from(vec![t(Source::Human, 0), t(Source::Human, 3)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let m = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            task_id: TaskId::Reach2d,
            task_spec_hash: task_spec_hash(&TaskSpec::preset(TaskId::Reach2d)),
            config_hash: "x".into(),
            master_seed: 1,
            transitions: 2,
            episodes: 2,
            partial: false,
        };
        save(&path, &d, &m).unwrap();
        assert_eq!(read_transitions(&path).unwrap(), d.transitions());
        assert!(manifest_path(&path).ends_with("d.manifest.json"));
        let line = d.to_jsonl().lines().next().unwrap().to_string();
        assert!(line.contains("\"source\":\"HUMAN\"") && line.contains("\"mode_at_step\":\"TELEOP\""));
        assert_eq!(summarize(d.transitions()).episodes, 2);
    }
}
