//! JSON wire protocol between the trainer and safety-driver consoles.
//!
//! Every message is one text frame holding an object with a `type` tag.
//! Client messages carry an `id`; the server acknowledges each id once and
//! repeats the acknowledgement for duplicates without acting on them again.

use base64::Engine;
use lanerl_core::env::{Action, DoneReason, Frame};
use lanerl_core::trainer::{EpisodeRecord, StepTelemetry, TaskCommand, TaskKind};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Starting,
    AwaitingTask,
    AwaitingReset,
    Running,
    Optimizing,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub episode_id: u64,
    pub step: usize,
    pub task: TaskKind,
    pub pose: Pose,
    /// m/s
    pub speed: f64,
    pub action: Action,
    /// Metres driven so far this episode.
    pub distance: f64,
    pub lane_offset: f64,
    /// Base64 PNG, longest side at most 128 px.
    pub image: String,
    pub mean_td: Option<f64>,
    pub buffer_size: usize,
}

impl TelemetryFrame {
    pub fn from_step(t: &StepTelemetry, thumbnail_px: usize) -> Self {
        Self {
            episode_id: t.episode_id,
            step: t.step,
            task: t.task,
            pose: Pose { x: t.pose[0], y: t.pose[1], heading: t.pose[2] },
            speed: t.speed,
            action: t.action,
            distance: t.distance,
            lane_offset: t.lane_offset,
            image: thumbnail_png(&t.frame, thumbnail_px),
            mean_td: t.mean_td,
            buffer_size: t.buffer_size,
        }
    }
}

pub fn thumbnail_png(frame: &Frame, max_side: usize) -> String {
    let png = frame.thumbnail(max_side.min(128)).encode_png().expect("in-memory PNG encoding");
    base64::engine::general_purpose::STANDARD.encode(png)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol_version: u32,
        config_hash: String,
        experiment: String,
        /// Consoles may only watch; control messages are refused.
        read_only: bool,
        state: RunState,
        can_undo: bool,
    },
    Telemetry(TelemetryFrame),
    Road {
        episode_id: u64,
        task: TaskKind,
        centerline: Vec<[f64; 2]>,
        lane_half_width: f64,
        route_length: f64,
    },
    EpisodeEnded {
        episode_id: u64,
        done_reason: DoneReason,
        distance: f64,
    },
    Episode {
        record: EpisodeRecord,
    },
    Status {
        state: RunState,
        can_undo: bool,
        message: Option<String>,
    },
    Ack {
        id: u64,
        accepted: bool,
        duplicate: bool,
        reason: Option<String>,
    },
    History {
        id: u64,
        records: Vec<EpisodeRecord>,
    },
    Error {
        message: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetTask { id: u64, task: TaskCommand },
    Intervene { id: u64 },
    ResetComplete { id: u64 },
    GetHistory { id: u64 },
}

impl ClientMessage {
    pub fn id(&self) -> u64 {
        match *self {
            Self::SetTask { id, .. } | Self::Intervene { id } | Self::ResetComplete { id } | Self::GetHistory { id } => id,
        }
    }
}
