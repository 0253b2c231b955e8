use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dagger::{IterationRow, Regime, RegimeRun};
use crate::error::{Error, Result};
use crate::sim::TaskId;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fields identifying a report and the protocol it was measured with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub task_id: TaskId,
    pub regime: Regime,
    pub master_seed: u64,
    pub eval_protocol: String,
    pub subtasks: Vec<String>,
    pub warmup_retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub header: ReportHeader,
    pub rows: Vec<IterationRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ReportHeader),
    Row(IterationRow),
}

const FIXED_LEFT: [&str; 4] = ["iteration", "dataset_size", "human_labeled_steps", "intervention_fraction"];
const FIXED_RIGHT: [&str; 3] = ["mean_episode_length", "warmup_action_mse", "wall_clock_s"];

impl RegimeReport {
    pub fn from_run(run: &RegimeRun, config_hash: &str, task_id: TaskId, subtasks: &[String], master_seed: u64) -> Self {
        Self {
            header: ReportHeader {
                schema_version: REPORT_SCHEMA_VERSION,
                config_hash: config_hash.to_string(),
                task_id,
                regime: run.regime,
                master_seed,
                eval_protocol: run.eval_protocol.describe(),
                subtasks: subtasks.to_vec(),
                warmup_retries: run.warmup.retries,
            },
            rows: run.rows.clone(),
        }
    }

    pub fn final_row(&self) -> Option<&IterationRow> {
        self.rows.last()
    }

    /// Every row invariant a report promises.
    pub fn check(&self) -> Result<()> {
        let n = self.header.subtasks.len();
        for (i, r) in self.rows.iter().enumerate() {
            if r.iteration != i {
                return Err(Error::Format(format!("row {i} has iteration {}", r.iteration)));
            }
            if r.subtask_success.len() != n {
                return Err(Error::Format(format!("row {i} has {} success columns, expected {n}", r.subtask_success.len())));
            }
            if !r.subtask_success.iter().all(|s| (0.0..=1.0).contains(s)) {
                return Err(Error::Format(format!("row {i} has a success rate outside [0, 1]")));
            }
            if !(0.0..=1.0).contains(&r.intervention_fraction) {
                return Err(Error::Format(format!("row {i} has an intervention fraction outside [0, 1]")));
            }
        }
        for w in self.rows.windows(2) {
            if w[1].dataset_size < w[0].dataset_size || w[1].human_labeled_steps < w[0].human_labeled_steps {
                return Err(Error::Format(format!("cumulative counters decrease at row {}", w[1].iteration)));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        for (k, v) in [
            ("schema_version", h.schema_version.to_string()),
            ("config_hash", h.config_hash.clone()),
            ("task_id", h.task_id.to_string()),
            ("regime", h.regime.to_string()),
            ("master_seed", h.master_seed.to_string()),
            ("eval_protocol", h.eval_protocol.clone()),
            ("warmup_retries", h.warmup_retries.to_string()),
        ] {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = FIXED_LEFT
            .iter()
            .map(|s| s.to_string())
            .chain(h.subtasks.iter().map(|s| format!("success_{s}")))
            .chain(FIXED_RIGHT.iter().map(|s| s.to_string()))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let rec: Vec<String> = [
                r.iteration.to_string(),
                r.dataset_size.to_string(),
                r.human_labeled_steps.to_string(),
                r.intervention_fraction.to_string(),
            ]
            .into_iter()
            .chain(r.subtask_success.iter().map(|s| s.to_string()))
            .chain([
                r.mean_episode_length.to_string(),
                r.warmup_action_mse.to_string(),
                r.wall_clock_s.to_string(),
            ])
            .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("report table: {m}"));
        let mut meta = std::collections::BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let (k, v) = line[1..]
                .trim()
                .split_once(": ")
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing header {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };

        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let cols: Vec<String> = rdr
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let n = cols.len();
        let right = n.saturating_sub(FIXED_RIGHT.len());
        if n < FIXED_LEFT.len() + FIXED_RIGHT.len() || cols[..4] != FIXED_LEFT || cols[right..] != FIXED_RIGHT {
            return Err(bad("unexpected columns".into()));
        }
        let subtasks: Vec<String> = cols[4..right]
            .iter()
            .map(|c| c.strip_prefix("success_").map(str::to_string).ok_or_else(|| bad(format!("column {c}"))))
            .collect::<Result<_>>()?;
        let regime: Regime = serde_json::from_value(serde_json::Value::String(get("regime")?))
            .map_err(|_| bad("bad regime".into()))?;

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(format!("bad number {:?}", &rec[i]))) };
            let u = |i: usize| -> Result<usize> { rec[i].parse().map_err(|_| bad(format!("bad count {:?}", &rec[i]))) };
            rows.push(IterationRow {
                iteration: u(0)?,
                dataset_size: u(1)?,
                human_labeled_steps: u(2)?,
                intervention_fraction: f(3)?,
                subtask_success: (4..right).map(f).collect::<Result<_>>()?,
                mean_episode_length: f(right)?,
                warmup_action_mse: f(right + 1)?,
                wall_clock_s: f(right + 2)?,
            });
        }
        let report = Self {
            header: ReportHeader {
                schema_version: num("schema_version")? as u32,
                config_hash: get("config_hash")?,
                task_id: get("task_id")?.parse()?,
                regime,
                master_seed: num("master_seed")?,
                eval_protocol: get("eval_protocol")?,
                subtasks,
                warmup_retries: num("warmup_retries")? as usize,
            },
            rows,
        };
        report.check_version()?;
        Ok(report)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Header(self.header.clone())).expect("serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(&Line::Row(r.clone())).expect("serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("report records line {}: {e}", i + 1)))?;
            match parsed {
                Line::Header(h) if header.is_none() && rows.is_empty() => header = Some(h),
                Line::Header(_) => return Err(Error::Format(format!("report records line {}: unexpected header", i + 1))),
                Line::Row(r) => rows.push(r),
            }
        }
        let header = header.ok_or_else(|| Error::Format("report records: no header".into()))?;
        let report = Self { header, rows };
        report.check_version()?;
        Ok(report)
    }

    fn check_version(&self) -> Result<()> {
        if self.header.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                self.header.schema_version
            )));
        }
        Ok(())
    }

    /// Loads a report, choosing the format by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::parse_csv(&text),
            Some("jsonl") => Self::parse_jsonl(&text),
            _ => Err(Error::Format("expected a .csv or .jsonl report".into())),
        };
        parsed.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
