use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::AttentionMode;
use super::pipeline::TrialRecord;
use crate::error::Result;

/// One aggregated cell of the long-form results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: AttentionMode,
    /// Task name, or `selection` for per-trial stream-selection metrics.
    pub task: String,
    /// `foreground`, `background`, or `-` for selection rows.
    pub target: String,
    pub metric: String,
    pub mean: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

#[derive(Default)]
struct Acc {
    sum: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }
}

fn pct(b: bool) -> f64 {
    if b {
        100.0
    } else {
        0.0
    }
}

impl ReportTable {
    /// Means over non-failed trials, grouped by system, task, target and
    /// metric.
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let mut cells: BTreeMap<(AttentionMode, String, String, String), Acc> = BTreeMap::new();
        let mut add = |sys, task: &str, target: &str, metric: &str, v: f64| {
            cells.entry((sys, task.to_string(), target.to_string(), metric.to_string())).or_default().push(v);
        };
        for r in records.iter().filter(|r| r.failed.is_none()) {
            let s = r.system;
            add(s, "selection", "-", "selection_accuracy", pct(r.selection_correct));
            add(s, "selection", "-", "label_accuracy", pct(r.label_correct));
            add(s, "selection", "-", "snr_db", r.signal.snr_db);
            add(s, "selection", "-", "si_sdr_db", r.signal.si_sdr_db);
            add(s, "selection", "-", "wer", r.signal.wer_pct);
            add(s, "selection", "-", "speaker_sim", r.signal.speaker_sim);
            for a in &r.answers {
                for (m, v) in &a.metrics {
                    add(s, a.query.task.as_str(), a.query.target.as_str(), m, *v);
                }
            }
        }
        let rows = cells
            .into_iter()
            .map(|((system, task, target, metric), acc)| ReportRow {
                system,
                task,
                target,
                metric,
                mean: acc.sum / acc.n as f64,
                n_trials: acc.n,
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, system: AttentionMode, task: &str, target: &str, metric: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.system == system && r.task == task && r.target == target && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,task,target,metric,mean,n_trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{}\n",
                r.system.as_str(),
                r.task,
                r.target,
                r.metric,
                r.mean,
                r.n_trials
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}
