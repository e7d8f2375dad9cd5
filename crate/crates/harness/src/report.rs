//! Summaries of trace files: sampled-count table, weight series, evaluation matrix.

use std::path::Path;

use bimab_core::env::TaskType;
use serde::{Deserialize, Serialize};

use crate::evaluate::EvaluationMatrix;
use crate::trace::{self, EpisodeTrace, Outcome, Parsed, WeightSnapshot};

pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";

/// Share of unparseable lines above which a report is considered failed.
pub const MAX_CORRUPT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub episodes: u64,
    /// Sampled episodes per cluster (rows) and arm (columns).
    pub counts: Vec<Vec<u64>>,
    /// Successful episodes per cluster and arm.
    pub successes: Vec<Vec<u64>>,
    pub weight_series: Vec<WeightSnapshot>,
    pub corrupt_lines: usize,
    pub lines: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationMatrix>,
}

impl Report {
    pub fn build(episodes: &Parsed<EpisodeTrace>, snapshots: &Parsed<WeightSnapshot>) -> Self {
        let n_c = episodes.records.iter().map(|e| e.cluster + 1).max().unwrap_or(0);
        let n_a = episodes.records.iter().map(|e| e.arm + 1).max().unwrap_or(0);
        let mut counts = vec![vec![0; n_a]; n_c];
        let mut successes = vec![vec![0; n_a]; n_c];
        for e in &episodes.records {
            counts[e.cluster][e.arm] += 1;
            if e.outcome == Outcome::Success {
                successes[e.cluster][e.arm] += 1;
            }
        }
        Self {
            episodes: episodes.records.len() as u64,
            counts,
            successes,
            weight_series: snapshots.records.clone(),
            corrupt_lines: episodes.corrupt + snapshots.corrupt,
            lines: episodes.lines + snapshots.lines,
            evaluation: None,
        }
    }

    pub fn corrupt_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.corrupt_lines as f64 / self.lines as f64
        }
    }

    pub fn cluster_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Sampled-times table: one column group per cluster, totals then per-arm counts.
    pub fn render_counts(&self) -> String {
        if self.counts.is_empty() {
            return "no episodes\n".into();
        }
        let arm_name = |j: usize| TaskType::from_index(j).map_or_else(|| format!("arm{j}"), |t| t.name().to_string());
        let n_a = self.counts[0].len();
        let width = (n_a * 12).max(12);
        let mut out = format!("{:<10}", "N_sv");
        for i in 0..self.counts.len() {
            out += &format!("|{:^width$}", i);
        }
        out += &format!("\n{:<10}", "total");
        for t in self.cluster_totals() {
            out += &format!("|{:^width$}", t);
        }
        out += &format!("\n{:<10}", "arm");
        for _ in &self.counts {
            out += "|";
            for j in 0..n_a {
                out += &format!("{:^12}", arm_name(j));
            }
        }
        out += &format!("\n{:<10}", "sampled");
        for row in &self.counts {
            out += "|";
            for c in row {
                out += &format!("{:^12}", c);
            }
        }
        out += "\n";
        out
    }

    /// Live cluster weights after each sync as `episode w0 w1 ...` lines.
    pub fn render_weights(&self) -> String {
        let mut out = String::new();
        for s in &self.weight_series {
            out += &s.episode.to_string();
            for w in &s.cluster_weights {
                out += &format!(" {w:.4}");
            }
            out += "\n";
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!("episodes: {}\n\nsampled times\n{}", self.episodes, self.render_counts());
        if !self.weight_series.is_empty() {
            out += "\ncluster weights after each sync\n";
            out += &self.render_weights();
        }
        if let Some(m) = &self.evaluation {
            out += "\nevaluation (percent)\n";
            out += &m.render();
        }
        out
    }
}

/// Reads the traces (and an evaluation matrix, when present) from `dir`.
/// Missing trace files count as empty.
pub fn report_dir(dir: &Path) -> std::io::Result<Report> {
    fn read_or_empty<T: serde::de::DeserializeOwned>(path: &Path) -> std::io::Result<Parsed<T>> {
        if path.exists() {
            trace::read_file(path)
        } else {
            Ok(Parsed { records: Vec::new(), corrupt: 0, lines: 0 })
        }
    }
    let episodes = read_or_empty(&dir.join(trace::EPISODES_FILE))?;
    let snapshots = read_or_empty(&dir.join(trace::SNAPSHOTS_FILE))?;
    let mut report = Report::build(&episodes, &snapshots);
    let ev_path = dir.join(EVAL_FILE);
    if ev_path.exists() {
        let text = std::fs::read_to_string(&ev_path)?;
        report.evaluation = serde_json::from_str(&text).ok();
    }
    Ok(report)
}
