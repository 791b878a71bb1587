//! Run records and their on-disk formats.
//!
//! A run log is JSONL with one [`LogLine`] per episode. Every line carries the
//! schema version, the config hash and the replica seed; there are no
//! timestamps, so identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::window_means;

pub const SCHEMA_VERSION: u32 = 1;

/// Fraction of episodes in the first and final reporting windows.
pub const WINDOW_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// First and last outer iteration of the episode (1-based, inclusive).
    pub t_start: usize,
    pub t_end: usize,
    /// Mean raw (reporting) reward over the actor transitions.
    pub raw_reward: f64,
    /// Mean agent-averaged learning reward over the actor transitions.
    pub learning_reward: f64,
    pub critic_disagreement_pre: f64,
    pub critic_disagreement_post: f64,
    pub td_disagreement_pre: f64,
    pub td_disagreement_post: f64,
    /// Mean squared actor-phase TD error.
    pub td_loss: f64,
    /// Mean squared critic-phase TD error.
    pub critic_td_loss: f64,
    pub direction_norm: f64,
    pub boundary_hits: usize,
    pub accepted_updates: usize,
    pub skipped_updates: usize,
    /// Largest `| ||step|| - alpha_t |` over accepted updates.
    pub max_step_error: f64,
}

/// One actor update attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub agent: usize,
    pub alpha_t: f64,
    pub step_norm: f64,
    pub skipped: bool,
}

/// One critic iteration within outer iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticLogRow {
    pub t: usize,
    pub k: usize,
    pub td_loss: Vec<f64>,
    pub boundary_hit: Vec<bool>,
    pub param_disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Sweep axis name and value when the run belongs to an ablation cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_value: Option<String>,
    #[serde(flatten)]
    pub record: EpisodeRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config_hash: String,
    pub seed: u64,
    pub axis: Option<(String, String)>,
    pub episodes: Vec<EpisodeRecord>,
}

impl RunLog {
    pub fn raw_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.raw_reward).collect()
    }

    /// Means of the first and final `WINDOW_FRACTION` of episode rewards.
    pub fn window_means(&self) -> (f64, f64) {
        window_means(&self.raw_rewards(), WINDOW_FRACTION)
    }

    pub fn lines(&self) -> impl Iterator<Item = LogLine> + '_ {
        self.episodes.iter().map(|e| LogLine {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            axis: self.axis.as_ref().map(|a| a.0.clone()),
            axis_value: self.axis.as_ref().map(|a| a.1.clone()),
            record: e.clone(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LogLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })?;
            if l.schema_version != SCHEMA_VERSION {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("schema version {} (expected {SCHEMA_VERSION})", l.schema_version),
                });
            }
            lines.push(l);
        }
        let first = lines.first().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "empty run log".into(),
        })?;
        Ok(RunLog {
            config_hash: first.config_hash.clone(),
            seed: first.seed,
            axis: first.axis.clone().zip(first.axis_value.clone()),
            episodes: lines.into_iter().map(|l| l.record).collect(),
        })
    }
}

/// One row of the per-run CSV summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub first_window_mean: f64,
    pub final_window_mean: f64,
    pub accepted_updates: usize,
    pub skipped_updates: usize,
    pub max_step_error: f64,
}

impl RunSummary {
    pub fn of(log: &RunLog) -> Self {
        let (first, last) = log.window_means();
        Self {
            config_hash: log.config_hash.clone(),
            seed: log.seed,
            episodes: log.episodes.len(),
            first_window_mean: first,
            final_window_mean: last,
            accepted_updates: log.episodes.iter().map(|e| e.accepted_updates).sum(),
            skipped_updates: log.episodes.iter().map(|e| e.skipped_updates).sum(),
            max_step_error: log.episodes.iter().map(|e| e.max_step_error).fold(0.0, f64::max),
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| Error::Internal(format!("csv write to {}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Critic log as CSV: `t, k, td_loss_<i>..., boundary_hit_<i>..., param_disagreement`.
pub fn write_critic_csv(path: &Path, rows: &[CriticLogRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = rows.first().map_or(0, |r| r.td_loss.len());
    let mut header = vec!["t".to_string(), "k".to_string()];
    header.extend((0..n).map(|i| format!("td_loss_{i}")));
    header.extend((0..n).map(|i| format!("boundary_hit_{i}")));
    header.push("param_disagreement".into());
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for r in rows {
        let mut cells = vec![r.t.to_string(), r.k.to_string()];
        cells.extend(r.td_loss.iter().map(|v| v.to_string()));
        cells.extend(r.boundary_hit.iter().map(|&b| (b as u8).to_string()));
        cells.push(r.param_disagreement.to_string());
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(episode: usize, reward: f64) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            t_start: episode * 10 + 1,
            t_end: episode * 10 + 10,
            raw_reward: reward,
            learning_reward: reward + 32.0,
            critic_disagreement_pre: 0.5,
            critic_disagreement_post: 0.1,
            td_disagreement_pre: 0.2,
            td_disagreement_post: 0.0,
            td_loss: 1.0 / 3.0,
            critic_td_loss: 2.0,
            direction_norm: 0.7,
            boundary_hits: 0,
            accepted_updates: 20,
            skipped_updates: 0,
            max_step_error: 1e-17,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = RunLog {
            config_hash: "abc".into(),
            seed: 7,
            axis: Some(("t_gossip".into(), "10".into())),
            episodes: (0..12).map(|e| record(e, -(e as f64) * 0.1)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.jsonl");
        log.write_jsonl(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert_eq!(RunLog::read_jsonl(&p).unwrap(), log);
    }

    #[test]
    fn summary_windows() {
        let log = RunLog {
            config_hash: "h".into(),
            seed: 1,
            axis: None,
            episodes: (0..20).map(|e| record(e, e as f64)).collect(),
        };
        let s = RunSummary::of(&log);
        assert_eq!(s.first_window_mean, 0.5);
        assert_eq!(s.final_window_mean, 18.5);
        assert_eq!(s.accepted_updates, 400);
    }
}
