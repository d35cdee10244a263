//! Hybrid keypose/dense execution.
//!
//! A keypose prediction is executed as an interpolated trajectory from the
//! current end-effector pose, one waypoint per control tick. Dense
//! predictions arrive as chunks of up to 16 deltas; the first 8 are executed
//! and the policy is queried again. Every prediction carries the mode for
//! what follows, which takes effect once the trajectory or chunk is used up.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_pose, so3_exp, Pose, PoseJson, Twist};
use crate::perception::{check_gripper, KeyposeAction, PointCloud};

/// Actions predicted per dense query.
pub const DENSE_HORIZON: usize = 16;
/// Actions executed from each dense chunk before the policy is queried again.
pub const DENSE_EXECUTED: usize = 8;
/// Sanity bound on a dense translation delta, meters.
pub const MAX_DENSE_LINEAR: f64 = 0.1;
/// Sanity bound on a dense rotation delta, radians.
pub const MAX_DENSE_ANGULAR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Keypose,
    Dense,
    Terminate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Keypose => "keypose",
            Mode::Dense => "dense",
            Mode::Terminate => "terminate",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keypose" => Ok(Mode::Keypose),
            "dense" => Ok(Mode::Dense),
            "terminate" => Ok(Mode::Terminate),
            _ => Err(Error::domain(format!("unknown mode '{s}'"))),
        }
    }
}

/// One relative end-effector action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseAction {
    pub delta: Twist,
    pub gripper: f64,
    pub next_mode: Mode,
}

impl DenseAction {
    /// Deltas beyond the sanity bounds are scaled back onto them.
    pub fn new(delta: Twist, gripper: f64, next_mode: Mode) -> Result<Self> {
        check_gripper(gripper)?;
        if !delta.is_finite() {
            return Err(Error::domain("dense delta is not finite"));
        }
        Ok(DenseAction {
            delta: Twist::new(
                clamp_norm(delta.linear, MAX_DENSE_LINEAR),
                clamp_norm(delta.angular, MAX_DENSE_ANGULAR),
            ),
            gripper,
            next_mode,
        })
    }
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        tracing::warn!(norm = n, max, "dense delta clamped");
        v * (max / n)
    } else {
        v
    }
}

/// What a policy sees when queried.
#[derive(Clone, Debug)]
pub struct Observation {
    pub tick: usize,
    pub ee_pose: Pose,
    pub gripper: f64,
    pub cloud: Option<PointCloud>,
}

impl Observation {
    pub fn new(tick: usize, ee_pose: Pose, gripper: f64) -> Self {
        Observation { tick, ee_pose, gripper, cloud: None }
    }
}

/// Source of keypose and dense predictions.
pub trait PolicySource {
    fn query_keypose(&mut self, obs: &Observation) -> Result<KeyposeAction>;
    /// Returns a chunk of 1 to [`DENSE_HORIZON`] actions.
    fn query_dense(&mut self, obs: &Observation) -> Result<Vec<DenseAction>>;
}

/// Waypoints from `current` (exclusive) to `target` (inclusive) such that
/// consecutive poses differ by at most `max_lin_step` meters and
/// `max_ang_step` radians.
pub fn plan_keypose_trajectory(
    current: &Pose,
    target: &Pose,
    max_lin_step: f64,
    max_ang_step: f64,
) -> Result<Vec<Pose>> {
    if !(max_lin_step > 0.0 && max_ang_step > 0.0) {
        return Err(Error::domain("trajectory step limits must be positive"));
    }
    let lin = (target.translation - current.translation).norm();
    let ang = current.rotation.angle_to(&target.rotation);
    // Ratios that are integers up to round-off should not gain a waypoint.
    let ratio = (lin / max_lin_step).max(ang / max_ang_step) * (1.0 - 1e-12);
    let n = ratio.ceil() as usize;
    if n == 0 {
        return Ok(vec![*target]);
    }
    (1..=n)
        .map(|k| interpolate_pose(current, target, k as f64 / n as f64))
        .collect()
}

/// World-frame delta: translation added, rotation pre-composed.
pub fn apply_dense_delta(current: &Pose, delta: &Twist) -> Pose {
    Pose::new(
        current.translation + delta.linear,
        so3_exp(&delta.angular).compose(&current.rotation),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub max_lin_step: f64,
    pub max_ang_step: f64,
    pub dense_executed: usize,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            max_lin_step: 0.02,
            max_ang_step: 0.05,
            dense_executed: DENSE_EXECUTED,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Pending {
    Idle,
    Trajectory {
        waypoints: VecDeque<Pose>,
        gripper: f64,
        next_mode: Mode,
    },
    Chunk(VecDeque<DenseAction>),
}

/// Output of one executor tick.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutorOutput {
    pub target: Pose,
    pub gripper: f64,
    /// Mode the target was produced in.
    pub mode: Mode,
    /// Mode for the next tick.
    pub next_mode: Mode,
    /// A policy query happened this tick.
    pub queried: bool,
}

#[derive(Clone, Debug)]
pub struct ExecutorState {
    mode: Mode,
    gripper: f64,
    steps: usize,
    last_target: Option<Pose>,
    pending: Pending,
    keypose_queries: usize,
    dense_queries: usize,
    config: ExecutorConfig,
}

impl ExecutorState {
    /// Episodes always begin in keypose mode.
    pub fn new(gripper: f64, config: ExecutorConfig) -> Result<Self> {
        check_gripper(gripper)?;
        if config.dense_executed == 0 || config.dense_executed > DENSE_HORIZON {
            return Err(Error::domain(format!(
                "dense_executed must be in 1..={DENSE_HORIZON}"
            )));
        }
        plan_keypose_trajectory(&Pose::identity(), &Pose::identity(), config.max_lin_step, config.max_ang_step)?;
        Ok(ExecutorState {
            mode: Mode::Keypose,
            gripper,
            steps: 0,
            last_target: None,
            pending: Pending::Idle,
            keypose_queries: 0,
            dense_queries: 0,
            config,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gripper(&self) -> f64 {
        self.gripper
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_target(&self) -> Option<&Pose> {
        self.last_target.as_ref()
    }

    pub fn keypose_queries(&self) -> usize {
        self.keypose_queries
    }

    pub fn dense_queries(&self) -> usize {
        self.dense_queries
    }

    /// Final waypoint of the trajectory being executed, if any.
    pub fn pending_keypose(&self) -> Option<&Pose> {
        match &self.pending {
            Pending::Trajectory { waypoints, .. } => waypoints.back(),
            _ => None,
        }
    }

    pub fn has_pending(&self) -> bool {
        self.pending != Pending::Idle
    }

    /// Advances one control tick and returns the end-effector target for the
    /// whole-body controller.
    pub fn step(&mut self, policy: &mut dyn PolicySource, obs: &Observation) -> Result<ExecutorOutput> {
        if self.mode == Mode::Terminate {
            return Err(Error::domain("executor already terminated"));
        }
        let mut queried = false;
        if self.pending == Pending::Idle {
            queried = true;
            self.pending = match self.mode {
                Mode::Keypose => {
                    let action = policy.query_keypose(obs)?;
                    check_gripper(action.gripper)?;
                    self.keypose_queries += 1;
                    let waypoints = plan_keypose_trajectory(
                        &obs.ee_pose,
                        &action.pose,
                        self.config.max_lin_step,
                        self.config.max_ang_step,
                    )?;
                    Pending::Trajectory {
                        waypoints: waypoints.into(),
                        gripper: action.gripper,
                        next_mode: action.next_mode,
                    }
                }
                Mode::Dense => {
                    let chunk = policy.query_dense(obs)?;
                    if chunk.is_empty() || chunk.len() > DENSE_HORIZON {
                        return Err(Error::Policy(format!(
                            "dense chunk has {} actions, expected 1..={DENSE_HORIZON}",
                            chunk.len()
                        )));
                    }
                    self.dense_queries += 1;
                    Pending::Chunk(chunk.into_iter().take(self.config.dense_executed).collect())
                }
                Mode::Terminate => unreachable!(),
            };
        }

        let produced_in = self.mode;
        let target = match &mut self.pending {
            Pending::Trajectory { waypoints, gripper, next_mode } => {
                let wp = waypoints.pop_front().expect("non-empty trajectory");
                if waypoints.is_empty() {
                    self.gripper = *gripper;
                    self.mode = *next_mode;
                    self.pending = Pending::Idle;
                }
                wp
            }
            Pending::Chunk(actions) => {
                let a = actions.pop_front().expect("non-empty chunk");
                check_gripper(a.gripper)?;
                self.gripper = a.gripper;
                if actions.is_empty() {
                    self.mode = a.next_mode;
                    self.pending = Pending::Idle;
                }
                apply_dense_delta(&obs.ee_pose, &a.delta)
            }
            Pending::Idle => unreachable!(),
        };
        self.steps += 1;
        self.last_target = Some(target);
        Ok(ExecutorOutput {
            target,
            gripper: self.gripper,
            mode: produced_in,
            next_mode: self.mode,
            queried,
        })
    }
}

/// One entry of a scripted policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptEntry {
    Keypose {
        pose: PoseJson,
        gripper: f64,
        next_mode: Mode,
    },
    DenseChunk {
        /// `[vx, vy, vz, wx, wy, wz]` per action.
        deltas: Vec<[f64; 6]>,
        gripper: f64,
        next_mode: Mode,
    },
}

/// Policy that replays a fixed list of predictions in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedPolicy {
    entries: Vec<ScriptEntry>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            let (gripper, ok) = match e {
                ScriptEntry::Keypose { pose, gripper, .. } => (*gripper, Pose::try_from(*pose).is_ok()),
                ScriptEntry::DenseChunk { deltas, gripper, .. } => {
                    (*gripper, !deltas.is_empty() && deltas.len() <= DENSE_HORIZON)
                }
            };
            if !ok || check_gripper(gripper).is_err() {
                return Err(Error::Policy(format!("script entry {i} is invalid")));
            }
        }
        Ok(ScriptedPolicy { entries, cursor: 0 })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Single keypose to `target`, then terminate.
    pub fn reach(target: &Pose, gripper: f64) -> Result<Self> {
        Self::new(vec![ScriptEntry::Keypose {
            pose: (*target).into(),
            gripper,
            next_mode: Mode::Terminate,
        }])
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }

    fn next(&mut self, wanted: &str) -> Result<&ScriptEntry> {
        let e = self
            .entries
            .get(self.cursor)
            .ok_or_else(|| Error::Policy(format!("script exhausted while a {wanted} query was pending")))?;
        self.cursor += 1;
        Ok(e)
    }
}

impl PolicySource for ScriptedPolicy {
    fn query_keypose(&mut self, _obs: &Observation) -> Result<KeyposeAction> {
        match self.next("keypose")? {
            ScriptEntry::Keypose { pose, gripper, next_mode } => {
                KeyposeAction::new(Pose::try_from(*pose)?, *gripper, *next_mode)
            }
            ScriptEntry::DenseChunk { .. } => Err(Error::Policy(format!(
                "script entry {} is a dense chunk but a keypose was requested",
                self.cursor - 1
            ))),
        }
    }

    fn query_dense(&mut self, _obs: &Observation) -> Result<Vec<DenseAction>> {
        match self.next("dense")? {
            ScriptEntry::DenseChunk { deltas, gripper, next_mode } => {
                let (gripper, next_mode) = (*gripper, *next_mode);
                deltas
                    .iter()
                    .map(|d| {
                        let v = nalgebra::Vector6::from_row_slice(d);
                        DenseAction::new(Twist::from_vector(&v), gripper, next_mode)
                    })
                    .collect()
            }
            ScriptEntry::Keypose { .. } => Err(Error::Policy(format!(
                "script entry {} is a keypose but a dense chunk was requested",
                self.cursor - 1
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn run(policy: &mut ScriptedPolicy, start: Pose) -> (Vec<ExecutorOutput>, ExecutorState) {
        let mut st = ExecutorState::new(0.0, ExecutorConfig::default()).unwrap();
        let mut ee = start;
        let mut out = Vec::new();
        while st.mode() != Mode::Terminate {
            let o = st.step(policy, &Observation::new(out.len(), ee, st.gripper())).unwrap();
            ee = o.target;
            out.push(o);
        }
        (out, st)
    }

    #[test]
    fn identical_poses_give_single_waypoint() {
        let p = Pose::new(Vector3::new(0.3, 0.1, 0.5), Rotation::about_z(0.4));
        assert_eq!(plan_keypose_trajectory(&p, &p, 0.02, 0.05).unwrap(), vec![p]);
    }

    #[test]
    fn half_meter_in_five_centimeter_steps() {
        let a = Pose::identity();
        let b = Pose::from_translation(Vector3::new(0.5, 0.0, 0.0));
        let w = plan_keypose_trajectory(&a, &b, 0.05, 0.05).unwrap();
        assert_eq!(w.len(), 10);
        assert_eq!(*w.last().unwrap(), b);
        let mut prev = a;
        for p in &w {
            assert!(((p.translation - prev.translation).norm() - 0.05).abs() < 1e-12);
            prev = *p;
        }
    }

    #[test]
    fn nonpositive_steps_rejected() {
        assert!(plan_keypose_trajectory(&Pose::identity(), &Pose::identity(), 0.0, 0.1).is_err());
    }

    #[test]
    fn dense_delta_translation_and_identity() {
        let p = Pose::new(Vector3::new(0.1, 0.2, 0.3), Rotation::about_z(1.0));
        assert_eq!(apply_dense_delta(&p, &Twist::zero()), p);
        let up = apply_dense_delta(&p, &Twist::new(Vector3::new(0.0, 0.0, 0.01), Vector3::zeros()));
        assert_eq!(up.translation, Vector3::new(0.1, 0.2, 0.3 + 0.01));
        assert_eq!(up.rotation, p.rotation);
    }

    #[test]
    fn dense_action_is_clamped() {
        let a = DenseAction::new(
            Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)),
            0.0,
            Mode::Dense,
        )
        .unwrap();
        assert!((a.delta.linear.norm() - MAX_DENSE_LINEAR).abs() < 1e-15);
        assert!((a.delta.angular.norm() - MAX_DENSE_ANGULAR).abs() < 1e-15);
        assert!(DenseAction::new(Twist::zero(), 1.1, Mode::Dense).is_err());
    }

    #[test]
    fn keypose_then_zero_deltas_transcript() {
        let start = Pose::from_translation(Vector3::new(0.5, 0.0, 0.5));
        let p = Pose::from_translation(Vector3::new(0.56, 0.0, 0.5));
        let mut policy = ScriptedPolicy::new(vec![
            ScriptEntry::Keypose { pose: p.into(), gripper: 1.0, next_mode: Mode::Dense },
            ScriptEntry::DenseChunk { deltas: vec![[0.0; 6]; 8], gripper: 1.0, next_mode: Mode::Terminate },
        ])
        .unwrap();
        let (out, st) = run(&mut policy, start);
        // 6 cm at 2 cm per tick: three waypoints, the last exactly P.
        let x: Vec<f64> = out.iter().map(|o| o.target.translation.x).collect();
        assert_eq!(x.len(), 11);
        assert!((x[0] - 0.52).abs() < 1e-15 && (x[1] - 0.54).abs() < 1e-15);
        assert_eq!(out[2].target, p);
        assert!(out[3..].iter().all(|o| o.target == p && o.mode == Mode::Dense));
        assert_eq!(out[0].gripper, 0.0);
        assert_eq!(out[2].gripper, 1.0);
        assert_eq!((st.keypose_queries(), st.dense_queries()), (1, 1));
        assert!(!st.has_pending());
    }

    #[test]
    fn sixteen_action_chunks_are_requeried_after_eight() {
        let mut entries = vec![ScriptEntry::Keypose {
            pose: Pose::identity().into(),
            gripper: 0.0,
            next_mode: Mode::Dense,
        }];
        for k in 0..4 {
            entries.push(ScriptEntry::DenseChunk {
                deltas: vec![[0.001, 0.0, 0.0, 0.0, 0.0, 0.0]; 16],
                gripper: 0.0,
                next_mode: if k == 3 { Mode::Terminate } else { Mode::Dense },
            });
        }
        let mut policy = ScriptedPolicy::new(entries).unwrap();
        let (out, st) = run(&mut policy, Pose::identity());
        assert_eq!(out.len(), 1 + 32);
        assert_eq!(st.dense_queries(), 4);
        let queries: Vec<usize> = (0..out.len()).filter(|&i| out[i].queried).collect();
        assert_eq!(queries, vec![0, 1, 9, 17, 25]);
    }

    #[test]
    fn stepping_after_terminate_fails() {
        let mut policy = ScriptedPolicy::reach(&Pose::identity(), 0.0).unwrap();
        let (_, mut st) = run(&mut policy, Pose::identity());
        let err = st.step(&mut policy, &Observation::new(0, Pose::identity(), 0.0));
        assert!(err.is_err());
    }

    #[test]
    fn script_type_mismatch_is_a_policy_error() {
        let mut policy = ScriptedPolicy::new(vec![ScriptEntry::DenseChunk {
            deltas: vec![[0.0; 6]],
            gripper: 0.0,
            next_mode: Mode::Terminate,
        }])
        .unwrap();
        let mut st = ExecutorState::new(0.0, ExecutorConfig::default()).unwrap();
        let e = st.step(&mut policy, &Observation::new(0, Pose::identity(), 0.0)).unwrap_err();
        assert!(matches!(e, Error::Policy(_)));
    }

    #[test]
    fn script_json_form() {
        let text = r#"[
            {"type": "keypose", "pose": {"pos": [0.5, 0, 0.4], "quat": [1, 0, 0, 0]}, "gripper": 1, "next_mode": "dense"},
            {"type": "dense_chunk", "deltas": [[0, 0, 0.01, 0, 0, 0]], "gripper": 0, "next_mode": "terminate"}
        ]"#;
        let p = ScriptedPolicy::from_json_str(text).unwrap();
        assert_eq!(p.entries().len(), 2);
        assert!(ScriptedPolicy::from_json_str(r#"[{"type": "wave"}]"#).is_err());
    }
}
