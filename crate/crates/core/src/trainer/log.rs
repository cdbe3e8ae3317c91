use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::DoneReason;
use crate::error::{Error, Result};

pub const LOG_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Train,
    Test,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

/// Which action source drove an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Decayed OU noise around the zero action (exploration episodes).
    Random,
    /// Actor output plus decayed OU noise.
    Noisy,
    /// Actor output.
    Optimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema: u32,
    pub episode_id: u64,
    pub task: TaskKind,
    pub policy: PolicyKind,
    pub noisy: bool,
    /// Episode counter used for the noise half-life.
    pub episode_index: u64,
    pub noise_decay: f64,
    pub road_seed: u64,
    /// Metres, the sum of step rewards.
    pub distance: f64,
    pub steps: usize,
    /// Simulated seconds.
    pub duration_s: f64,
    pub done_reason: DoneReason,
    pub opt_steps: usize,
    pub mean_td: Option<f64>,
    pub vae_loss: Option<f64>,
    pub buffer_size: usize,
    pub reverted: bool,
}

impl EpisodeRecord {
    /// Termination by the safety driver or a traffic infraction.
    pub fn is_disengagement(&self) -> bool {
        matches!(self.done_reason, DoneReason::LaneDeparture | DoneReason::SpeedInfraction | DoneReason::Intervention)
    }
}

/// JSON-lines episode log; undone episodes stay in place, marked reverted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<EpisodeRecord>,
}

impl EpisodeLog {
    pub fn push(&mut self, record: EpisodeRecord) -> usize {
        self.records.push(record);
        self.records.len() - 1
    }

    pub fn mark_reverted(&mut self, index: usize) {
        self.records[index].reverted = true;
    }

    pub fn active(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter().filter(|r| !r.reverted)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: EpisodeRecord =
                serde_json::from_str(line).map_err(|e| Error::codec(format!("episode log line {}: {e}", i + 1)))?;
            if r.schema != LOG_SCHEMA {
                return Err(Error::codec(format!("episode log line {}: unsupported schema {}", i + 1, r.schema)));
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    /// One row per non-reverted episode.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("episode_id,task,distance,steps,epsilon_decay,mean_td\n");
        for r in self.active() {
            let td = r.mean_td.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{}", r.episode_id, r.task.as_str(), r.distance, r.steps, r.noise_decay, td)
                .expect("string write");
        }
        out
    }

    pub fn summary(&self, model: &str) -> Summary {
        let mut s = Summary { model: model.to_owned(), ..Summary::default() };
        for r in self.active() {
            match r.task {
                TaskKind::Train => {
                    s.training_episodes += 1;
                    s.training_distance_m += r.distance;
                    s.training_time_s += r.duration_s;
                }
                TaskKind::Test => {
                    s.test_episodes += 1;
                    s.test_distance_m += r.distance;
                    s.disengagements += r.is_disengagement() as u64;
                    s.best_test_m = s.best_test_m.max(r.distance);
                }
            }
        }
        s
    }
}

/// Per-model totals over non-reverted episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub model: String,
    pub training_episodes: u64,
    pub training_distance_m: f64,
    pub training_time_s: f64,
    pub test_episodes: u64,
    pub test_distance_m: f64,
    pub best_test_m: f64,
    pub disengagements: u64,
}

impl Summary {
    /// Test metres per disengagement; `None` when there was none.
    pub fn meters_per_disengagement(&self) -> Option<f64> {
        (self.disengagements > 0).then(|| self.test_distance_m / self.disengagements as f64)
    }

    pub const CSV_HEADER: &'static str =
        "model,training_episodes,training_distance_m,training_time_s,meters_per_disengagement,disengagements\n";

    /// Summary row; a missing meters-per-disengagement prints as `-`.
    pub fn csv_row(&self) -> String {
        let mpd = self.meters_per_disengagement().map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        format!(
            "{},{},{},{},{},{}\n",
            self.model, self.training_episodes, self.training_distance_m, self.training_time_s, mpd, self.disengagements
        )
    }
}
