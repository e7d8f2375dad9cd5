//! Line-delimited JSON traces.
//!
//! A run writes up to three files into its output directory:
//!
//! * `episodes.jsonl`, one [`EpisodeTrace`] per episode;
//! * `snapshots.jsonl`, one [`WeightSnapshot`] per bandit sync;
//! * `timings.jsonl`, wall-clock time per episode.
//!
//! Wall time lives in its own file so that the first two are reproducible
//! byte for byte from `(config, seed)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use bimab_core::bandit::{BilevelBandit, CurriculumIndex, Feedback};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Collision => "collision",
            Self::Timeout => "timeout",
        }
    }
}

impl From<bimab_core::env::TerminalKind> for Outcome {
    fn from(k: bimab_core::env::TerminalKind) -> Self {
        use bimab_core::env::TerminalKind as K;
        match k {
            K::Success => Self::Success,
            K::Collision => Self::Collision,
            K::Timeout => Self::Timeout,
        }
    }
}

/// One training episode. The bandit fields are absent for baseline schedulers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeTrace {
    /// 1-based episode index.
    pub t: u64,
    pub cluster: usize,
    pub arm: usize,
    pub raw_reward: f64,
    pub r_norm: Option<f64>,
    pub r_hat_cluster: Option<f64>,
    pub r_hat_arm: Option<f64>,
    pub outcome: Outcome,
    pub steps: u64,
}

impl EpisodeTrace {
    pub fn new(
        t: u64,
        index: CurriculumIndex,
        raw_reward: f64,
        feedback: Option<&Feedback<f64>>,
        outcome: Outcome,
        steps: u64,
    ) -> Self {
        Self {
            t,
            cluster: index.cluster,
            arm: index.arm,
            raw_reward,
            r_norm: feedback.map(|f| f.rescaled.r_norm),
            r_hat_cluster: feedback.map(|f| f.rescaled.cluster),
            r_hat_arm: feedback.map(|f| f.rescaled.arm),
            outcome,
            steps,
        }
    }
}

/// Live bandit weights right after a sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSnapshot {
    pub episode: u64,
    pub cluster_weights: Vec<f64>,
    pub arm_weights: Vec<Vec<f64>>,
}

impl WeightSnapshot {
    pub fn of(bandit: &BilevelBandit<f64>) -> Self {
        Self {
            episode: bandit.state.episode_counter,
            cluster_weights: bandit.state.live_cluster_weights.clone(),
            arm_weights: bandit.state.live_arm_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub t: u64,
    pub wall_ms: f64,
}

/// Where trace records go. Files for real runs, memory for tests.
pub trait TraceSink {
    fn episode(&mut self, rec: &EpisodeTrace) -> std::io::Result<()>;
    fn snapshot(&mut self, rec: &WeightSnapshot) -> std::io::Result<()>;
    fn timing(&mut self, rec: &Timing) -> std::io::Result<()>;
    fn flush(&mut self) -> std::io::Result<()>;
}

fn write_line<W: Write, T: Serialize>(w: &mut W, rec: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")
}

pub struct FileSink {
    episodes: BufWriter<File>,
    snapshots: BufWriter<File>,
    timings: BufWriter<File>,
}

impl FileSink {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name| File::create(dir.join(name)).map(BufWriter::new);
        Ok(Self { episodes: open(EPISODES_FILE)?, snapshots: open(SNAPSHOTS_FILE)?, timings: open(TIMINGS_FILE)? })
    }
}

impl TraceSink for FileSink {
    fn episode(&mut self, rec: &EpisodeTrace) -> std::io::Result<()> {
        write_line(&mut self.episodes, rec)
    }
    fn snapshot(&mut self, rec: &WeightSnapshot) -> std::io::Result<()> {
        write_line(&mut self.snapshots, rec)
    }
    fn timing(&mut self, rec: &Timing) -> std::io::Result<()> {
        write_line(&mut self.timings, rec)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.episodes.flush()?;
        self.snapshots.flush()?;
        self.timings.flush()
    }
}

/// Keeps every record in memory; timings are dropped.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub episodes: Vec<EpisodeTrace>,
    pub snapshots: Vec<WeightSnapshot>,
}

impl TraceSink for MemorySink {
    fn episode(&mut self, rec: &EpisodeTrace) -> std::io::Result<()> {
        self.episodes.push(rec.clone());
        Ok(())
    }
    fn snapshot(&mut self, rec: &WeightSnapshot) -> std::io::Result<()> {
        self.snapshots.push(rec.clone());
        Ok(())
    }
    fn timing(&mut self, _: &Timing) -> std::io::Result<()> {
        Ok(())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Records parsed from a line-delimited file plus the number of lines that
/// failed to parse. Blank lines are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub corrupt: usize,
    pub lines: usize,
}

impl<T> Parsed<T> {
    pub fn corrupt_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.corrupt as f64 / self.lines as f64
        }
    }
}

pub fn parse_lines<T: DeserializeOwned, R: BufRead>(r: R) -> std::io::Result<Parsed<T>> {
    let mut out = Parsed { records: Vec::new(), corrupt: 0, lines: 0 };
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match serde_json::from_str(&line) {
            Ok(rec) => out.records.push(rec),
            Err(_) => out.corrupt += 1,
        }
    }
    Ok(out)
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> std::io::Result<Parsed<T>> {
    parse_lines(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u64) -> EpisodeTrace {
        EpisodeTrace {
            t,
            cluster: 1,
            arm: 2,
            raw_reward: -0.30000000000000004,
            r_norm: Some(0.1),
            r_hat_cluster: Some(0.4),
            r_hat_arm: None,
            outcome: Outcome::Collision,
            steps: 12,
        }
    }

    #[test]
    fn lines_round_trip() {
        let mut buf = Vec::new();
        for t in 1..4 {
            write_line(&mut buf, &rec(t)).unwrap();
        }
        let parsed: Parsed<EpisodeTrace> = parse_lines(buf.as_slice()).unwrap();
        assert_eq!(parsed.corrupt, 0);
        assert_eq!(parsed.records, (1..4).map(rec).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_lines_counted() {
        let mut buf = Vec::new();
        write_line(&mut buf, &rec(1)).unwrap();
        buf.extend_from_slice(b"{\"t\": oops\n\n");
        write_line(&mut buf, &rec(2)).unwrap();
        let parsed: Parsed<EpisodeTrace> = parse_lines(buf.as_slice()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.corrupt, 1);
        assert_eq!(parsed.lines, 3);
    }

    #[test]
    fn outcome_serialises_lowercase() {
        let s = serde_json::to_string(&rec(1)).unwrap();
        assert!(s.contains("\"outcome\":\"collision\""));
        assert!(s.contains("\"r_hat_arm\":null"));
    }
}
