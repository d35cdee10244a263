//! Kinematic simulator, scenarios, 10 Hz episode recording, replay and
//! benchmarking.
//!
//! The simulator is purely kinematic: a joint command takes effect within
//! the tick it is issued in. One control tick is 0.1 s; the whole-body
//! controller's inner iterations run inside a tick.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::pair_distances;
use crate::error::{Error, Result};
use crate::executor::{ExecutorConfig, ExecutorState, Mode, Observation, PolicySource, ScriptedPolicy};
use crate::geometry::{Pose, PoseJson, Rotation};
use crate::model::{JointConfig, RobotModel, BASE_DOFS};
use crate::perception::Aabb;
use crate::wbc::{self, tracking_errors, WbcParams};

/// Control period, seconds.
pub const TICK_SECONDS: f64 = 0.1;
/// Version written into every record header.
pub const SCHEMA_VERSION: u32 = 1;
/// Commands may exceed position limits by at most this much.
pub const LIMIT_TOL: f64 = 1e-9;

/// Kinematic robot state.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub q: JointConfig,
    pub gripper: f64,
    pub time: f64,
    pub tick: usize,
}

impl SimState {
    pub fn new(model: &RobotModel, q: JointConfig, gripper: f64) -> Result<Self> {
        check_command(model, &q)?;
        Ok(SimState { q, gripper, time: 0.0, tick: 0 })
    }
}

fn check_command(model: &RobotModel, q: &JointConfig) -> Result<()> {
    model.check_config(q)?;
    match model.limit_violation(q, LIMIT_TOL) {
        Some(dof) => Err(Error::LimitViolation {
            dof,
            value: q[dof],
            lo: model.q_min()[dof],
            hi: model.q_max()[dof],
        }),
        None => Ok(()),
    }
}

/// Applies a joint command for one tick.
pub fn sim_step(model: &RobotModel, state: &SimState, command: &JointConfig) -> Result<SimState> {
    check_command(model, command)?;
    let tick = state.tick + 1;
    Ok(SimState {
        q: command.clone(),
        gripper: state.gripper,
        time: tick as f64 * TICK_SECONDS,
        tick,
    })
}

/// Initial configuration: `q` (default the retract posture) plus uniform noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub q: Option<Vec<f64>>,
    /// Base x and y offsets drawn from `[-r, r]`, meters.
    pub base_xy_range: f64,
    /// Base heading offset drawn from `[-r, r]`, radians.
    pub base_yaw_range: f64,
    /// Per-arm-joint offset drawn from `[-r, r]`, radians; clamped to limits.
    pub arm_noise: f64,
    pub gripper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// A fixed world-frame pose.
    Pose { pose: PoseJson },
    /// Position uniform in a box. Orientation is `quat` (default: the
    /// initial end-effector orientation) turned about world z by a uniform
    /// yaw in `[-yaw_range, yaw_range]`.
    Region {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default)]
        quat: Option<[f64; 4]>,
        #[serde(default)]
        yaw_range: f64,
    },
    /// Forward kinematics of a random collision-free in-limit configuration
    /// (base within `base_range` of the origin), then translated by at most
    /// `perturbation` meters.
    Reachable {
        base_range: [f64; 3],
        perturbation: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub position: f64,
    pub orientation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Model file; the built-in reference model when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub initial: InitialSpec,
    pub target: TargetSpec,
    pub tolerance: Tolerance,
    pub max_ticks: usize,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Relative model paths are resolved against the scenario's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_json_str(&text)?;
        if let (Some(m), Some(dir)) = (s.model.as_mut(), path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.tolerance.position > 0.0 && self.tolerance.orientation > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_ticks == 0 {
            return bad("max_ticks must be at least 1".into());
        }
        let i = &self.initial;
        if [i.base_xy_range, i.base_yaw_range, i.arm_noise].iter().any(|r| !(*r >= 0.0)) {
            return bad("randomization ranges must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&i.gripper) {
            return bad("initial gripper must lie in [0, 1]".into());
        }
        match &self.target {
            TargetSpec::Pose { pose } => {
                Pose::try_from(*pose).map_err(|e| Error::Scenario(e.to_string()))?;
            }
            TargetSpec::Region { min, max, quat, yaw_range } => {
                Aabb::new(*min, *max).map_err(|e| Error::Scenario(e.to_string()))?;
                if let Some([w, x, y, z]) = quat {
                    Rotation::from_wxyz(*w, *x, *y, *z).map_err(|e| Error::Scenario(e.to_string()))?;
                }
                if !(*yaw_range >= 0.0) {
                    return bad("yaw_range must be non-negative".into());
                }
            }
            TargetSpec::Reachable { base_range, perturbation } => {
                if base_range.iter().chain([perturbation]).any(|r| !(*r >= 0.0)) {
                    return bad("reachable-target ranges must be non-negative".into());
                }
            }
        }
        Ok(())
    }

    /// The scenario's model: its file, or the reference model.
    pub fn load_model(&self) -> Result<RobotModel> {
        match &self.model {
            Some(p) => RobotModel::from_file(p),
            None => Ok(RobotModel::reference()),
        }
    }

    /// Draws the initial configuration and target for one seed.
    pub fn resolve(&self, model: &RobotModel, seed: u64) -> Result<ResolvedEpisode> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = match &self.initial.q {
            Some(v) => JointConfig::new(v.clone()),
            None => model.retract().clone(),
        };
        model.check_config(&q)?;
        let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        q[0] += sym(&mut rng, self.initial.base_xy_range);
        q[1] += sym(&mut rng, self.initial.base_xy_range);
        q[2] += sym(&mut rng, self.initial.base_yaw_range);
        for i in BASE_DOFS..model.dofs() {
            q[i] += sym(&mut rng, self.initial.arm_noise);
        }
        let q = model.clamp(&q);
        if let Some(dof) = model.limit_violation(&q, 0.0) {
            return Err(Error::Scenario(format!("initial configuration violates DoF {dof}")));
        }
        let target = match &self.target {
            TargetSpec::Pose { pose } => Pose::try_from(*pose)?,
            TargetSpec::Region { min, max, quat, yaw_range } => {
                let b = Aabb::new(*min, *max)?;
                let p = b.sample(&mut rng);
                let base_rot = match quat {
                    Some([w, x, y, z]) => Rotation::from_wxyz(*w, *x, *y, *z)?,
                    None => model.ee_pose(&q)?.rotation,
                };
                let yaw = sym(&mut rng, *yaw_range);
                Pose::new(p, Rotation::about_z(yaw).compose(&base_rot))
            }
            TargetSpec::Reachable { base_range, perturbation } => {
                sample_reachable_target(model, *base_range, *perturbation, &WbcParams::default(), &mut rng)?
            }
        };
        Ok(ResolvedEpisode {
            seed,
            initial_q: q,
            initial_gripper: self.initial.gripper,
            target,
        })
    }
}

/// A random target that the reference controller can reach: forward
/// kinematics of a uniformly drawn in-limit configuration whose collision
/// pairs all clear the damper margin, translated by a random offset of norm
/// at most `perturbation`.
pub fn sample_reachable_target<R: Rng>(
    model: &RobotModel,
    base_range: [f64; 3],
    perturbation: f64,
    params: &WbcParams,
    rng: &mut R,
) -> Result<Pose> {
    let clearance = params.collision.d_min + 0.01;
    for _ in 0..10_000 {
        let q = JointConfig::new(
            (0..model.dofs())
                .map(|i| {
                    let (lo, hi) = if i < BASE_DOFS {
                        (-base_range[i], base_range[i])
                    } else {
                        (model.q_min()[i], model.q_max()[i])
                    };
                    if hi > lo { rng.random_range(lo..hi) } else { lo }
                })
                .collect(),
        );
        let frames = model.forward_kinematics(&q)?;
        if pair_distances(model, &frames).iter().any(|(_, d)| *d < clearance) {
            continue;
        }
        let offset = loop {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            if v.norm_squared() <= 1.0 {
                break v * perturbation;
            }
        };
        let mut target = frames.end_effector;
        target.translation += offset;
        return Ok(target);
    }
    Err(Error::Scenario("no collision-free configuration found".into()))
}

/// Concrete start and goal of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedEpisode {
    pub seed: u64,
    pub initial_q: JointConfig,
    pub initial_gripper: f64,
    pub target: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordHeader {
    pub schema_version: u32,
    pub episode_id: String,
    pub model_name: String,
    pub model_hash: String,
    pub params_hash: String,
    pub seed: u64,
    pub initial_q: Vec<f64>,
    pub initial_gripper: f64,
}

/// One 10 Hz sample. `q` and `ee_pose` are the state after the tick's
/// command; `target_ee_pose` is the target the command was solved for, or
/// null when the configuration was held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub gripper: f64,
    pub ee_pose: Pose,
    pub target_ee_pose: Option<Pose>,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_tick: usize,
    /// Exclusive.
    pub end_tick: usize,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalientPoint {
    pub tick: usize,
    pub xyz: [f64; 3],
}

/// Sidecar annotations: mode segments covering every tick, and the points
/// keyposes were aimed at.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    pub episode_id: String,
    pub segments: Vec<Segment>,
    pub salient_points: Vec<SalientPoint>,
}

/// Contiguous runs of equal modes.
pub fn segments_from_modes(modes: &[Mode]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, m) in modes.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.mode == *m => s.end_tick = i + 1,
            _ => out.push(Segment { start_tick: i, end_tick: i + 1, mode: *m }),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub header: RecordHeader,
    pub ticks: Vec<TickRecord>,
    pub annotations: Annotations,
}

impl EpisodeRecord {
    /// Header line followed by one line per tick.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for t in &self.ticks {
            out.push_str(&serde_json::to_string(t).expect("tick serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the JSONL body; annotations are left empty.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n').enumerate();
        let (_, first) = lines.next().ok_or(Error::Schema {
            line: 1,
            tick: None,
            message: "empty record".into(),
        })?;
        let header: RecordHeader = serde_json::from_str(first).map_err(|e| Error::Schema {
            line: 1,
            tick: None,
            message: format!("bad header: {e}"),
        })?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                line: 1,
                tick: None,
                message: format!("unsupported schema version {}", header.schema_version),
            });
        }
        let mut ticks = Vec::new();
        for (i, raw) in lines {
            let (line, expect) = (i + 1, ticks.len());
            let err = |message: String| Error::Schema { line, tick: Some(expect), message };
            if !raw.ends_with('\n') {
                return Err(err("truncated line".into()));
            }
            let t: TickRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            if t.tick != expect {
                return Err(err(format!("tick index {} out of sequence", t.tick)));
            }
            if t.q.len() != header.initial_q.len() {
                return Err(err(format!("q has {} values, header has {}", t.q.len(), header.initial_q.len())));
            }
            ticks.push(t);
        }
        Ok(EpisodeRecord {
            header,
            ticks,
            annotations: Annotations::default(),
        })
    }

    /// Writes `path` and the annotation sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))?;
        let side = annotation_path(path);
        let text = serde_json::to_string_pretty(&self.annotations)?;
        std::fs::write(&side, text).map_err(|e| Error::io(side, e))
    }

    /// Loads a record and, if present, its annotation sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rec = Self::from_jsonl(&text)?;
        let side = annotation_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            rec.annotations = serde_json::from_str(&text)?;
        }
        Ok(rec)
    }
}

/// `foo.jsonl` → `foo.annotations.json`.
pub fn annotation_path(record: &Path) -> PathBuf {
    record.with_extension("annotations.json")
}

/// Streams a record to disk tick by tick.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
    episode_id: String,
    modes: Vec<Mode>,
    salient_points: Vec<SalientPoint>,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, header: &RecordHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = RecordWriter {
            out: BufWriter::new(file),
            episode_id: header.episode_id.clone(),
            path,
            modes: Vec::new(),
            salient_points: Vec::new(),
        };
        w.line(header)?;
        Ok(w)
    }

    fn line<T: Serialize>(&mut self, v: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    /// Appends a tick; its index must equal the number of ticks written.
    pub fn push(&mut self, tick: &TickRecord) -> Result<()> {
        if tick.tick != self.modes.len() {
            return Err(Error::domain(format!(
                "tick {} written after {} ticks",
                tick.tick,
                self.modes.len()
            )));
        }
        self.line(tick)?;
        self.modes.push(tick.mode);
        Ok(())
    }

    pub fn add_salient_point(&mut self, tick: usize, xyz: [f64; 3]) {
        self.salient_points.push(SalientPoint { tick, xyz });
    }

    pub fn ticks_written(&self) -> usize {
        self.modes.len()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Flushes the record and writes the annotation sidecar.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        let ann = Annotations {
            episode_id: self.episode_id.clone(),
            segments: segments_from_modes(&self.modes),
            salient_points: std::mem::take(&mut self.salient_points),
        };
        let side = annotation_path(&self.path);
        std::fs::write(&side, serde_json::to_string_pretty(&ann)?).map_err(|e| Error::io(&side, e))?;
        Ok(self.path)
    }
}

/// Builds the tick record for the state after a command.
pub fn tick_record(
    model: &RobotModel,
    tick: usize,
    q: &JointConfig,
    gripper: f64,
    target: Option<Pose>,
    mode: Mode,
) -> Result<TickRecord> {
    Ok(TickRecord {
        tick,
        t: tick as f64 * TICK_SECONDS,
        q: q.as_slice().to_vec(),
        gripper,
        ee_pose: model.ee_pose(q)?,
        target_ee_pose: target,
        mode,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub record: EpisodeRecord,
    pub success: bool,
    /// Why an unsuccessful episode ended.
    pub reason: Option<String>,
    pub target: Pose,
    pub final_position_error: f64,
    pub final_orientation_error: f64,
}

impl EpisodeOutcome {
    pub fn ticks(&self) -> usize {
        self.record.ticks.len()
    }
}

pub fn episode_id(scenario: &Scenario, seed: u64) -> String {
    format!("{}-{seed:016x}", scenario.name)
}

/// Runs one episode at 10 Hz: executor step, whole-body solve, simulator
/// step. After the executor terminates, the last target is held until the
/// end effector settles within tolerance or the tick budget runs out.
pub fn run_episode(
    model: &RobotModel,
    scenario: &Scenario,
    policy: &mut dyn PolicySource,
    params: &WbcParams,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let ep = scenario.resolve(model, seed)?;
    run_resolved(model, scenario, &ep, policy, params)
}

/// [`run_episode`] with a single-keypose reach to the scenario target.
pub fn run_reach_episode(model: &RobotModel, scenario: &Scenario, params: &WbcParams, seed: u64) -> Result<EpisodeOutcome> {
    let ep = scenario.resolve(model, seed)?;
    let mut policy = ScriptedPolicy::reach(&ep.target, ep.initial_gripper)?;
    run_resolved(model, scenario, &ep, &mut policy, params)
}

pub fn run_resolved(
    model: &RobotModel,
    scenario: &Scenario,
    ep: &ResolvedEpisode,
    policy: &mut dyn PolicySource,
    params: &WbcParams,
) -> Result<EpisodeOutcome> {
    params.validate()?;
    let header = RecordHeader {
        schema_version: SCHEMA_VERSION,
        episode_id: episode_id(scenario, ep.seed),
        model_name: model.name.clone(),
        model_hash: model.hash(),
        params_hash: params.hash(),
        seed: ep.seed,
        initial_q: ep.initial_q.as_slice().to_vec(),
        initial_gripper: ep.initial_gripper,
    };
    let mut state = SimState::new(model, ep.initial_q.clone(), ep.initial_gripper)?;
    let mut exec = ExecutorState::new(ep.initial_gripper, ExecutorConfig::default())?;
    let mut ticks = Vec::new();
    let mut salient = Vec::new();
    let mut held: Option<Pose> = None;
    let mut reason = Some("timeout".to_string());
    let (mut pe, mut oe) = tracking_errors(&model.ee_pose(&state.q)?, &ep.target)?;

    for tick in 0..scenario.max_ticks {
        let ee = model.ee_pose(&state.q)?;
        let (target, mode) = if exec.mode() == Mode::Terminate {
            (held.expect("a target precedes termination"), Mode::Terminate)
        } else {
            let obs = Observation::new(tick, ee, state.gripper);
            let out = match exec.step(policy, &obs) {
                Ok(o) => o,
                Err(e) => {
                    tracing::warn!(tick, error = %e, "policy failure");
                    reason = Some(format!("policy failure: {e}"));
                    break;
                }
            };
            if out.queried && out.mode == Mode::Keypose {
                // A one-waypoint trajectory is already used up; its target is the keypose.
                let goal = exec.pending_keypose().copied().unwrap_or(out.target);
                salient.push(SalientPoint { tick, xyz: goal.translation.into() });
            }
            (out.target, out.mode)
        };
        held = Some(target);
        state.gripper = exec.gripper();

        let sol = match wbc::solve(model, &state.q, &target, params) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(tick, error = %e, "whole-body solve failed");
                reason = Some(format!("wbc failure: {e}"));
                break;
            }
        };
        state = sim_step(model, &state, &sol.command)?;
        ticks.push(tick_record(model, tick, &state.q, state.gripper, Some(target), mode)?);

        (pe, oe) = tracking_errors(&model.ee_pose(&state.q)?, &ep.target)?;
        if exec.mode() == Mode::Terminate && pe <= scenario.tolerance.position && oe <= scenario.tolerance.orientation {
            reason = None;
            break;
        }
    }

    let modes: Vec<Mode> = ticks.iter().map(|t| t.mode).collect();
    let record = EpisodeRecord {
        annotations: Annotations {
            episode_id: header.episode_id.clone(),
            segments: segments_from_modes(&modes),
            salient_points: salient,
        },
        header,
        ticks,
    };
    Ok(EpisodeOutcome {
        record,
        success: reason.is_none(),
        reason,
        target: ep.target,
        final_position_error: pe,
        final_orientation_error: oe,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks: usize,
    /// Largest absolute deviation over all ticks and DoFs.
    pub max_deviation: f64,
    pub per_dof_max: Vec<f64>,
    /// First tick with a nonzero deviation.
    pub first_divergent_tick: Option<usize>,
    pub model_hash_match: bool,
    pub params_hash_match: bool,
    pub warnings: Vec<String>,
}

/// Re-solves the recorded target stream from the recorded initial
/// configuration and compares against the recorded joint trajectory.
pub fn replay(record: &EpisodeRecord, model: &RobotModel, params: &WbcParams) -> Result<ReplayReport> {
    let h = &record.header;
    let mut warnings = Vec::new();
    let model_hash_match = h.model_hash == model.hash();
    let params_hash_match = h.params_hash == params.hash();
    if !model_hash_match {
        warnings.push(format!("model hash differs from the recording ({})", h.model_name));
    }
    if !params_hash_match {
        warnings.push("controller parameter hash differs from the recording".into());
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let mut state = SimState::new(model, JointConfig::new(h.initial_q.clone()), h.initial_gripper)?;
    let mut per_dof_max = vec![0.0f64; model.dofs()];
    let mut first = None;
    for t in &record.ticks {
        let command = match &t.target_ee_pose {
            Some(target) => wbc::solve(model, &state.q, target, params)?.command,
            None => state.q.clone(),
        };
        state = sim_step(model, &state, &command)?;
        for (i, (a, b)) in state.q.as_slice().iter().zip(&t.q).enumerate() {
            let d = (a - b).abs();
            if d > 0.0 && first.is_none() {
                first = Some(t.tick);
            }
            per_dof_max[i] = per_dof_max[i].max(d);
        }
    }
    Ok(ReplayReport {
        ticks: record.ticks.len(),
        max_deviation: per_dof_max.iter().copied().fold(0.0, f64::max),
        per_dof_max,
        first_divergent_tick: first,
        model_hash_match,
        params_hash_match,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub ticks: usize,
    pub final_position_error: f64,
    pub final_orientation_error: f64,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub scenario: String,
    pub seed: u64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_ticks: f64,
    pub mean_final_position_error: f64,
    pub mean_final_orientation_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub summary: BenchmarkSummary,
    pub trials: Vec<TrialResult>,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,seed,success,ticks,final_position_error,final_orientation_error,reason\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{}\n",
                t.trial,
                t.seed,
                t.success,
                t.ticks,
                t.final_position_error,
                t.final_orientation_error,
                t.reason.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

/// Seed of trial `index`: the first word of stream `index` of a ChaCha
/// generator keyed by `seed`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Runs `trials` reach episodes in parallel and aggregates them.
pub fn benchmark(model: &RobotModel, scenario: &Scenario, params: &WbcParams, trials: usize, seed: u64) -> Result<BenchmarkReport> {
    if trials == 0 {
        return Err(Error::domain("benchmark needs at least one trial"));
    }
    scenario.validate()?;
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = trial_seed(seed, trial);
            let o = run_reach_episode(model, scenario, params, s)?;
            Ok(TrialResult {
                trial,
                seed: s,
                success: o.success,
                ticks: o.ticks(),
                final_position_error: o.final_position_error,
                final_orientation_error: o.final_orientation_error,
                reason: o.reason,
            })
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let successes = results.iter().filter(|t| t.success).count();
    let summary = BenchmarkSummary {
        scenario: scenario.name.clone(),
        seed,
        trials,
        successes,
        success_rate: successes as f64 / n,
        mean_ticks: results.iter().map(|t| t.ticks as f64).sum::<f64>() / n,
        mean_final_position_error: results.iter().map(|t| t.final_position_error).sum::<f64>() / n,
        mean_final_orientation_error: results.iter().map(|t| t.final_orientation_error).sum::<f64>() / n,
    };
    Ok(BenchmarkReport { summary, trials: results })
}

/// Reads a JSONL record from any reader, for streams that are not files.
pub fn read_record<R: BufRead>(mut r: R) -> Result<EpisodeRecord> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| Error::io("<stream>", e))?;
    EpisodeRecord::from_jsonl(&text)
}

/// Opens a record file for [`read_record`].
pub fn open_record(path: impl AsRef<Path>) -> Result<BufReader<File>> {
    let path = path.as_ref();
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}
