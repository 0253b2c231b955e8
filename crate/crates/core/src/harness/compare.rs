use serde::Serialize;

use super::report::RegimeReport;
use crate::dagger::Regime;
use crate::error::{Error, Result};

/// One report's line in a comparison. Deltas and the ratio are relative to
/// the first report given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub regime: Regime,
    pub final_success: Vec<f64>,
    pub success_delta: Vec<f64>,
    pub human_labeled_steps: usize,
    pub human_step_ratio: f64,
    /// Best full-task success over all rows minus the final one.
    pub success_drop: f64,
    pub warmup_action_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub subtasks: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn mismatches(a: &RegimeReport, b: &RegimeReport) -> Vec<String> {
    let (a, b) = (&a.header, &b.header);
    let mut out = Vec::new();
    if a.task_id != b.task_id {
        out.push(format!("task_id ({} vs {})", a.task_id, b.task_id));
    }
    if a.eval_protocol != b.eval_protocol {
        out.push(format!("eval_protocol ({} vs {})", a.eval_protocol, b.eval_protocol));
    }
    if a.subtasks != b.subtasks {
        out.push(format!("subtasks ({} vs {})", a.subtasks.join(","), b.subtasks.join(",")));
    }
    out
}

/// Side-by-side final results of labeled reports.
pub fn compare(reports: &[(String, RegimeReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two reports".into()));
    }
    let (base_label, base) = &reports[0];
    for (label, r) in &reports[1..] {
        let diff = mismatches(base, r);
        if !diff.is_empty() {
            return Err(Error::ProtocolMismatch(format!(
                "{label} differs from {base_label} in {}",
                diff.join(", ")
            )));
        }
    }
    let mut rows = Vec::new();
    for (label, r) in reports {
        let last = r
            .final_row()
            .ok_or_else(|| Error::Format(format!("{label} has no rows")))?;
        let base_last = base.final_row().ok_or_else(|| Error::Format(format!("{base_label} has no rows")))?;
        let overall = |row: &crate::dagger::IterationRow| row.subtask_success.last().copied().unwrap_or(0.0);
        let peak = r.rows.iter().map(overall).fold(f64::NEG_INFINITY, f64::max);
        rows.push(ComparisonRow {
            label: label.clone(),
            regime: r.header.regime,
            final_success: last.subtask_success.clone(),
            success_delta: last
                .subtask_success
                .iter()
                .zip(&base_last.subtask_success)
                .map(|(x, b)| x - b)
                .collect(),
            human_labeled_steps: last.human_labeled_steps,
            human_step_ratio: last.human_labeled_steps as f64 / base_last.human_labeled_steps as f64,
            success_drop: peak - overall(last),
            warmup_action_mse: last.warmup_action_mse,
        });
    }
    Ok(Comparison {
        subtasks: base.header.subtasks.clone(),
        rows,
    })
}

impl Comparison {
    /// Comma-separated table, one line per report.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["label".to_string(), "regime".into()];
        head.extend(self.subtasks.iter().map(|s| format!("success_{s}")));
        head.extend(self.subtasks.iter().map(|s| format!("delta_{s}")));
        head.extend(
            ["human_labeled_steps", "human_step_ratio", "success_drop", "warmup_action_mse"].map(String::from),
        );
        w.write_record(&head).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.label.clone(), r.regime.to_string()];
            rec.extend(r.final_success.iter().map(|x| format!("{x:.4}")));
            rec.extend(r.success_delta.iter().map(|x| format!("{x:+.4}")));
            rec.push(r.human_labeled_steps.to_string());
            rec.push(format!("{:.4}", r.human_step_ratio));
            rec.push(format!("{:.4}", r.success_drop));
            rec.push(format!("{:.6}", r.warmup_action_mse));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
