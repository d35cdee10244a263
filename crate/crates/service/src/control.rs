//! The authoritative control loop. Owns the simulated robot and the WBC
//! calls; the network side only feeds it commands and reads its output.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use wholebody::collision::pair_distances;
use wholebody::executor::Mode;
use wholebody::geometry::{PoseJson, Pose};
use wholebody::harness::{tick_record, RecordHeader, RecordWriter, SimState, SCHEMA_VERSION};
use wholebody::model::JointConfig;
use wholebody::{wbc, RobotModel, WbcParams};

use crate::protocol::{CommandMessage, PairDistance, RecordAction, RecordingStatus, ServerMessage, StateMessage};

struct Recording {
    writer: RecordWriter,
    display: String,
}

pub struct ControlLoop {
    model: Arc<RobotModel>,
    params: WbcParams,
    state: SimState,
    target: Option<Pose>,
    mode: Mode,
    tick: u64,
    record_dir: PathBuf,
    recording: Option<Recording>,
    recordings_started: u64,
}

impl ControlLoop {
    /// Starts at the retract posture with the gripper open.
    pub fn new(model: Arc<RobotModel>, params: WbcParams, record_dir: impl Into<PathBuf>) -> wholebody::Result<Self> {
        params.validate()?;
        let state = SimState::new(&model, model.retract().clone(), 0.0)?;
        Ok(ControlLoop {
            model,
            params,
            state,
            target: None,
            mode: Mode::Keypose,
            tick: 0,
            record_dir: record_dir.into(),
            recording: None,
            recordings_started: 0,
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn params(&self) -> &WbcParams {
        &self.params
    }

    pub fn q(&self) -> &JointConfig {
        &self.state.q
    }

    pub fn target(&self) -> Option<&Pose> {
        self.target.as_ref()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Applies one command and returns the replies for the sender. Target
    /// poses only overwrite the stored target, so the last one before a tick
    /// is the one solved for.
    pub fn apply(&mut self, cmd: CommandMessage) -> Vec<ServerMessage> {
        match self.apply_inner(cmd) {
            Ok(replies) => replies,
            Err(msg) => vec![ServerMessage::error(msg)],
        }
    }

    fn apply_inner(&mut self, cmd: CommandMessage) -> Result<Vec<ServerMessage>, String> {
        match cmd {
            CommandMessage::TargetPose { pos, quat } => {
                let pose = Pose::try_from(PoseJson { pos, quat }).map_err(|e| e.to_string())?;
                self.target = Some(pose);
                Ok(vec![])
            }
            CommandMessage::Gripper { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(format!("gripper value {value} not in [0, 1]"));
                }
                self.state.gripper = value;
                Ok(vec![])
            }
            CommandMessage::Mode { mode } => {
                self.mode = mode;
                Ok(vec![])
            }
            CommandMessage::Record { action: RecordAction::Start, path } => self.start_recording(path.as_deref()),
            CommandMessage::Record { action: RecordAction::Stop, .. } => match self.stop_recording()? {
                Some(msg) => Ok(vec![msg]),
                None => Err("not recording".into()),
            },
            CommandMessage::Reset { q } => {
                let q = match q {
                    Some(v) => JointConfig::new(v),
                    None => self.model.retract().clone(),
                };
                let state = SimState::new(&self.model, q, self.state.gripper).map_err(|e| e.to_string())?;
                let mut replies = Vec::new();
                if let Some(msg) = self.stop_recording()? {
                    replies.push(msg);
                }
                self.state = SimState { tick: self.state.tick, time: self.state.time, ..state };
                self.target = None;
                replies.push(ServerMessage::Reset { q: self.state.q.as_slice().to_vec() });
                Ok(replies)
            }
        }
    }

    fn start_recording(&mut self, path: Option<&str>) -> Result<Vec<ServerMessage>, String> {
        if let Some(r) = &self.recording {
            return Err(format!("already recording to {}", r.display));
        }
        let rel = match path {
            Some(p) => confine(p)?,
            None => PathBuf::from(format!("episode-{:06}.jsonl", self.recordings_started)),
        };
        let full = self.record_dir.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        let stem = rel.file_stem().and_then(|s| s.to_str()).unwrap_or("episode").to_string();
        let header = RecordHeader {
            schema_version: SCHEMA_VERSION,
            episode_id: format!("{stem}-{:016x}", self.tick),
            model_name: self.model.name.clone(),
            model_hash: self.model.hash(),
            params_hash: self.params.hash(),
            seed: 0,
            initial_q: self.state.q.as_slice().to_vec(),
            initial_gripper: self.state.gripper,
        };
        let writer = RecordWriter::create(&full, &header).map_err(|e| e.to_string())?;
        let display = rel.display().to_string();
        self.recordings_started += 1;
        self.recording = Some(Recording { writer, display: display.clone() });
        Ok(vec![ServerMessage::Recording { action: RecordAction::Start, path: display, ticks: 0 }])
    }

    /// Finishes the active recording, if any.
    pub fn stop_recording(&mut self) -> Result<Option<ServerMessage>, String> {
        let Some(r) = self.recording.take() else {
            return Ok(None);
        };
        let ticks = r.writer.ticks_written();
        r.writer.finish().map_err(|e| e.to_string())?;
        Ok(Some(ServerMessage::Recording { action: RecordAction::Stop, path: r.display, ticks }))
    }

    /// Advances one tick: solve for the held target (if any), step the
    /// simulator, append to the active recording.
    pub fn tick(&mut self) -> StateMessage {
        let mut warning = None;
        let mut solved_for = None;
        let command = match &self.target {
            Some(target) => match wbc::solve(&self.model, &self.state.q, target, &self.params) {
                Ok(r) => {
                    warning = r.diagnostic;
                    solved_for = Some(*target);
                    r.command
                }
                Err(e) => {
                    warning = Some(format!("wbc failure, holding configuration: {e}"));
                    self.state.q.clone()
                }
            },
            None => self.state.q.clone(),
        };
        match wholebody::harness::sim_step(&self.model, &self.state, &command) {
            Ok(next) => self.state = next,
            Err(e) => {
                warning = Some(format!("command rejected, holding configuration: {e}"));
                solved_for = None;
                self.state.tick += 1;
            }
        }
        self.tick += 1;
        let mut recording = None;
        if let Some(r) = &mut self.recording {
            let idx = r.writer.ticks_written();
            let pushed = tick_record(&self.model, idx, &self.state.q, self.state.gripper, solved_for, self.mode)
                .and_then(|t| r.writer.push(&t));
            if let Err(e) = pushed {
                warning = Some(format!("recording failed: {e}"));
            }
            recording = Some(RecordingStatus { path: r.display.clone(), ticks: r.writer.ticks_written() });
        }
        self.state_message(recording, warning)
    }

    fn state_message(&self, recording: Option<RecordingStatus>, warning: Option<String>) -> StateMessage {
        let frames = self.model.forward_kinematics(&self.state.q).expect("state stays within the model");
        let range = self.params.collision.detection_range;
        let distances = pair_distances(&self.model, &frames)
            .into_iter()
            .filter(|(_, d)| *d <= range)
            .map(|(pair, d)| PairDistance { pair, d })
            .collect();
        StateMessage {
            tick: self.tick,
            q: self.state.q.as_slice().to_vec(),
            ee_pose: *frames.ee(),
            gripper: self.state.gripper,
            mode: self.mode,
            distances,
            target_ee_pose: self.target,
            recording,
            warning,
        }
    }
}

impl Drop for ControlLoop {
    fn drop(&mut self) {
        if let Err(e) = self.stop_recording() {
            tracing::warn!("closing recording: {e}");
        }
    }
}

/// Accepts only relative paths that stay inside the record directory.
fn confine(p: &str) -> Result<PathBuf, String> {
    let path = Path::new(p);
    let ok = !p.is_empty()
        && path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        && path.file_name().is_some();
    if ok {
        Ok(path.to_path_buf())
    } else {
        Err(format!("record path {p:?} must be relative and stay inside the record directory"))
    }
}
