//! Wire messages. Every WebSocket text frame carries one JSON object with a
//! `type` field. Angles are radians, quaternions `[w, x, y, z]`.

use serde::{Deserialize, Serialize};
use wholebody::executor::Mode;
use wholebody::geometry::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordAction {
    Start,
    Stop,
}

/// Client to server. Unknown fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CommandMessage {
    TargetPose {
        pos: [f64; 3],
        quat: [f64; 4],
    },
    Gripper {
        value: f64,
    },
    Mode {
        mode: Mode,
    },
    Record {
        action: RecordAction,
        /// Record file, relative to the service's record directory.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    Reset {
        /// Defaults to the retract posture.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
    },
}

impl CommandMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandMessage::TargetPose { .. } => "target_pose",
            CommandMessage::Gripper { .. } => "gripper",
            CommandMessage::Mode { .. } => "mode",
            CommandMessage::Record { .. } => "record",
            CommandMessage::Reset { .. } => "reset",
        }
    }

    pub fn target_pose(pose: &Pose) -> Self {
        CommandMessage::TargetPose {
            pos: pose.translation.into(),
            quat: pose.rotation.wxyz(),
        }
    }
}

pub fn parse_command(text: &str) -> Result<CommandMessage, String> {
    serde_json::from_str(text).map_err(|e| format!("invalid command: {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub pair: String,
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingStatus {
    pub path: String,
    pub ticks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub q: Vec<f64>,
    pub ee_pose: Pose,
    pub gripper: f64,
    pub mode: Mode,
    /// Collision pairs inside the damper detection range.
    pub distances: Vec<PairDistance>,
    pub target_ee_pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording: Option<RecordingStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Server to client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session: u64,
        role: Role,
        model: String,
        params_hash: String,
    },
    State(StateMessage),
    Error {
        message: String,
    },
    Recording {
        action: RecordAction,
        path: String,
        ticks: usize,
    },
    Reset {
        q: Vec<f64>,
    },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
