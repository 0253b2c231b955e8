//! Frames exchanged with the operator cockpit. Every frame is one JSON
//! object sent as a websocket text message, tagged by `type`.

use serde::{Deserialize, Serialize};

use handover::bilateral::{ControlEvent, Mode};
use handover::sim::{JointState, TaskId};

pub const PROTOCOL_VERSION: u32 = 1;

/// A client message and the last snapshot tick the client had seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientFrame {
    #[serde(default)]
    pub last_tick: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    /// First frame of every connection.
    Hello { protocol_version: u32 },
    EngageTeleop,
    StartPolicy,
    HumanGrab,
    HumanRelease,
    Stop,
    Save,
    Reset,
    Discard,
    /// Moves the hand holding leader `arm`. Exactly one of `joint_deltas`
    /// (added to the current hand target) and `ee_target` (world frame) may
    /// be set; `base_delta` sets the per-tick base displacement.
    Drive {
        arm: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint_deltas: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ee_target: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_delta: Option<f64>,
    },
    Gripper { arm: usize, closed: bool },
}

impl Command {
    /// The mode-machine event this command carries, if any.
    pub fn control_event(&self) -> Option<ControlEvent> {
        Some(match self {
            Command::EngageTeleop => ControlEvent::EngageTeleop,
            Command::StartPolicy => ControlEvent::StartPolicy,
            Command::HumanGrab => ControlEvent::HumanGrab,
            Command::HumanRelease => ControlEvent::HumanRelease,
            Command::Stop => ControlEvent::Stop,
            Command::Save => ControlEvent::Save,
            Command::Reset => ControlEvent::Reset,
            Command::Discard => ControlEvent::Discard,
            Command::Hello { .. } | Command::Drive { .. } | Command::Gripper { .. } => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub position: [f64; 2],
    pub held_by: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Physics ticks completed when this state was captured.
    pub tick: u64,
    pub mode: Mode,
    pub episode: usize,
    /// Follower arms.
    pub arms: Vec<JointState>,
    /// Mount point of each arm in the world frame.
    pub mounts: Vec<[f64; 2]>,
    /// Virtual leader devices.
    pub leaders: Vec<JointState>,
    /// Torque rendered on each leader this tick.
    pub leader_torque: Vec<Vec<f64>>,
    pub base_x: f64,
    pub objects: Vec<ObjectView>,
    pub goal: [f64; 2],
    /// Cascaded subtask success.
    pub subtasks: Vec<bool>,
    /// True while the human has taken over an autonomous rollout.
    pub intervention: bool,
    pub episode_over: bool,
    /// Transitions waiting for SAVE or DISCARD.
    pub recording: usize,
    /// Client events dropped because the queue was full.
    pub dropped_events: u64,
    /// `last_tick` of the latest applied client frame.
    pub acked_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerFrame {
    Hello {
        protocol_version: u32,
        session: String,
        task_id: TaskId,
        subtasks: Vec<String>,
        link_lengths: Vec<f64>,
        physics_hz: f64,
        snapshot_hz: f64,
    },
    Snapshot(Snapshot),
    Saved {
        tick: u64,
        file: String,
        transitions: usize,
    },
    Discarded {
        tick: u64,
        transitions: usize,
    },
    Error {
        tick: u64,
        message: String,
    },
    /// Another operator already holds the session.
    Busy { message: String },
}

impl ServerFrame {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}

pub fn parse_client(text: &str) -> Result<ClientFrame, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed frame: {e}"))
}
