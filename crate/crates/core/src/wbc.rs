//! Whole-body differential IK: maps an end-effector target pose to a joint
//! position command for the base and arm together.
//!
//! Each iteration solves for a joint velocity `q̇` minimizing
//!
//! ```text
//! ‖J q̇ − e/Δt‖²_Wee + ‖q + q̇Δt − q_retract‖²_Wposture + ‖q̇_base‖²_Wdamping + λ‖q̇‖²
//! ```
//!
//! where `e` is the body-frame pose error and `J` the body-frame Jacobian of
//! the end-effector, subject to velocity limits, position limits folded into
//! the velocity box, and collision velocity dampers. The velocity is then
//! Euler-integrated over `Δt`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{active_constraints_at, DamperConstraint, DamperParams};
use crate::error::{Error, Result};
use crate::geometry::{pose_error, Pose, Twist};
use crate::model::{FrameId, JointConfig, RobotModel, BASE_DOFS};
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus};

/// Environment variable naming a JSON file that overrides [`WbcParams`] defaults.
pub const PARAMS_ENV: &str = "HOMER_WBC_PARAMS";

/// Slack added to every damper bound when the first solve is infeasible.
const INFEASIBLE_RELAXATION: f64 = 0.01;
/// Input configurations this far outside the limits are clamped and flagged.
const LIMIT_INPUT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbcParams {
    pub ee_position_weight: f64,
    pub ee_orientation_weight: f64,
    /// Posture weight applied to every arm joint.
    pub arm_posture_weight: f64,
    /// Full per-DoF posture weights; overrides `arm_posture_weight` when set.
    pub posture_weights: Option<Vec<f64>>,
    /// Damping on base `(x, y, theta)` velocity.
    pub base_damping: [f64; 3],
    /// Levenberg-Marquardt factor; the Hessian diagonal gets
    /// `lm_damping * ‖W_ee e‖² + lm_damping_floor`.
    pub lm_damping: f64,
    /// Constant part of the Levenberg-Marquardt term; keeps the problem
    /// strictly convex and null-space motion slow when the error vanishes.
    pub lm_damping_floor: f64,
    /// Integration step per inner iteration, seconds.
    pub dt: f64,
    pub max_iters: usize,
    pub pos_tol: f64,
    pub ori_tol: f64,
    pub collision_enabled: bool,
    pub collision: DamperParams,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for WbcParams {
    fn default() -> Self {
        WbcParams {
            ee_position_weight: 1.0,
            ee_orientation_weight: 1.0,
            arm_posture_weight: 2e-3,
            posture_weights: None,
            base_damping: [1.5; 3],
            lm_damping: 1.0,
            lm_damping_floor: 1e-3,
            dt: 0.02,
            max_iters: 20,
            pos_tol: 1e-4,
            ori_tol: 1e-4,
            collision_enabled: true,
            collision: DamperParams::default(),
            qp_tol: 1e-8,
            qp_max_iter: 4000,
        }
    }
}

impl WbcParams {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: WbcParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Defaults, overridden by the file named in `HOMER_WBC_PARAMS` if set.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(PARAMS_ENV) {
            Some(path) if !path.is_empty() => Self::from_file(path),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.ee_position_weight,
            self.ee_orientation_weight,
            self.arm_posture_weight,
            self.lm_damping,
            self.lm_damping_floor,
        ];
        if weights
            .iter()
            .chain(&self.base_damping)
            .chain(self.posture_weights.iter().flatten())
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::domain("WBC weights must be finite and non-negative"));
        }
        if !(self.dt > 0.0) || !(self.pos_tol > 0.0) || !(self.ori_tol > 0.0) {
            return Err(Error::domain("WBC needs dt > 0 and positive tolerances"));
        }
        if self.max_iters == 0 {
            return Err(Error::domain("WBC needs max_iters >= 1"));
        }
        self.collision.validate()
    }

    pub fn posture_weight_vector(&self, model: &RobotModel) -> Result<DVector<f64>> {
        match &self.posture_weights {
            Some(w) if w.len() != model.dofs() => Err(Error::domain(format!(
                "posture_weights has {} entries, model has {} DoFs",
                w.len(),
                model.dofs()
            ))),
            Some(w) => Ok(DVector::from_column_slice(w)),
            None => Ok(DVector::from_fn(model.dofs(), |i, _| {
                if i < BASE_DOFS {
                    0.0
                } else {
                    self.arm_posture_weight
                }
            })),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One assembled iteration.
#[derive(Clone, Debug)]
pub struct AssembledStep {
    pub problem: QpProblem,
    pub error: Twist,
    pub constraints: Vec<DamperConstraint>,
    /// The input configuration was outside its limits and got clamped.
    pub clamped: bool,
    pub q: JointConfig,
}

fn clamp_input(model: &RobotModel, q: &JointConfig) -> Result<(JointConfig, bool)> {
    model.check_config(q)?;
    match model.limit_violation(q, LIMIT_INPUT_TOL) {
        Some(dof) => {
            tracing::warn!(dof, value = q[dof], "configuration outside limits, clamping");
            Ok((model.clamp(q), true))
        }
        None => Ok((model.clamp(q), false)),
    }
}

/// Builds the QP for one iteration at configuration `q`.
pub fn assemble_step(
    model: &RobotModel,
    q: &JointConfig,
    target: &Pose,
    params: &WbcParams,
) -> Result<AssembledStep> {
    let (q, clamped) = clamp_input(model, q)?;
    let n = model.dofs();
    let dt = params.dt;
    let frames = model.forward_kinematics(&q)?;
    let error = pose_error(&frames.end_effector, target)?;
    let jac = model.body_jacobian(&frames, FrameId::EndEffector, &Vector3::zeros());

    let wp = params.posture_weight_vector(model)?;
    let w_ee = nalgebra::Vector6::new(
        params.ee_position_weight,
        params.ee_position_weight,
        params.ee_position_weight,
        params.ee_orientation_weight,
        params.ee_orientation_weight,
        params.ee_orientation_weight,
    );
    let jw = jac.transpose() * nalgebra::Matrix6::from_diagonal(&w_ee);

    let weighted_error = error.to_vector().component_mul(&w_ee);
    let mu = lm_term(params, &weighted_error);
    let mut h = &jw * &jac;
    for i in 0..n {
        h[(i, i)] += dt * dt * wp[i] + mu;
    }
    for i in 0..BASE_DOFS {
        h[(i, i)] += params.base_damping[i];
    }
    let h = (&h + h.transpose()) * 0.5;

    let posture = (&q.0 - &model.retract().0).component_mul(&wp) * dt;
    let g = -(&jw * error.to_vector()) / dt + posture;

    let v_max = model.velocity_limits();
    let lb = DVector::from_fn(n, |i, _| (-v_max[i]).max((model.q_min()[i] - q[i]) / dt));
    let ub = DVector::from_fn(n, |i, _| v_max[i].min((model.q_max()[i] - q[i]) / dt));

    let constraints = if params.collision_enabled {
        active_constraints_at(model, &frames, dt, &params.collision)
    } else {
        Vec::new()
    };
    let mut a = DMatrix::zeros(constraints.len(), n);
    let mut b = DVector::zeros(constraints.len());
    for (r, c) in constraints.iter().enumerate() {
        a.row_mut(r).copy_from(&c.row);
        b[r] = c.bound;
    }

    Ok(AssembledStep {
        problem: QpProblem { h, g, a, b, lb, ub },
        error,
        constraints,
        clamped,
        q,
    })
}

/// Levenberg-Marquardt diagonal for a given weighted error.
pub fn lm_term(params: &WbcParams, weighted_error: &nalgebra::Vector6<f64>) -> f64 {
    params.lm_damping * weighted_error.norm_squared() + params.lm_damping_floor
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationTrace {
    pub q: JointConfig,
    pub qdot: Vec<f64>,
    pub position_error: f64,
    pub orientation_error: f64,
    pub active_dampers: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WbcResult {
    pub command: JointConfig,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
    pub converged: bool,
    /// Input was outside limits and was clamped before solving.
    pub clamped_input: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationTrace>,
}

/// Position distance and orientation-error magnitude between two poses.
pub fn tracking_errors(current: &Pose, target: &Pose) -> Result<(f64, f64)> {
    let e = pose_error(current, target)?;
    Ok(((target.translation - current.translation).norm(), e.angular.norm()))
}

fn solve_with_relaxation(step: &mut AssembledStep, params: &WbcParams) -> Result<(QpSolution, Option<String>)> {
    let sol = solve_qp(&step.problem, params.qp_tol, params.qp_max_iter)?;
    if sol.status == QpStatus::Optimal {
        return Ok((sol, None));
    }
    let first = sol.status;
    if step.problem.rows() > 0 {
        step.problem.b.add_scalar_mut(INFEASIBLE_RELAXATION);
        let sol = solve_qp(&step.problem, params.qp_tol, params.qp_max_iter)?;
        if sol.status == QpStatus::Optimal {
            let msg = format!("QP {first:?}; damper bounds relaxed by {INFEASIBLE_RELAXATION}");
            return Ok((sol, Some(msg)));
        }
    }
    Err(Error::domain(format!("QP {first:?} even after relaxing damper bounds")))
}

pub fn solve(model: &RobotModel, q: &JointConfig, target: &Pose, params: &WbcParams) -> Result<WbcResult> {
    run(model, q, target, params, false)
}

/// Like [`solve`], also recording every inner iteration.
pub fn solve_traced(model: &RobotModel, q: &JointConfig, target: &Pose, params: &WbcParams) -> Result<WbcResult> {
    run(model, q, target, params, true)
}

fn run(model: &RobotModel, q0: &JointConfig, target: &Pose, params: &WbcParams, trace: bool) -> Result<WbcResult> {
    params.validate()?;
    let (mut q, clamped_input) = clamp_input(model, q0)?;
    // Surfaces a singular pose error before any motion.
    tracking_errors(&model.ee_pose(&q)?, target)?;

    let mut result = WbcResult {
        command: q.clone(),
        iterations: 0,
        position_error: f64::INFINITY,
        orientation_error: f64::INFINITY,
        converged: false,
        clamped_input,
        diagnostic: None,
        trace: Vec::new(),
    };

    for it in 0..params.max_iters {
        let mut step = assemble_step(model, &q, target, params)?;
        let (sol, note) = match solve_with_relaxation(&mut step, params) {
            Ok(r) => r,
            Err(e) => {
                // Fail safe: hold the last feasible configuration.
                let (pe, oe) = tracking_errors(&model.ee_pose(&q)?, target)?;
                result.command = q;
                result.iterations = it;
                result.position_error = pe;
                result.orientation_error = oe;
                result.diagnostic = Some(e.to_string());
                return Ok(result);
            }
        };
        if note.is_some() {
            result.diagnostic = note;
        }
        let p = &step.problem;
        let qdot = DVector::from_fn(model.dofs(), |i, _| sol.x[i].clamp(p.lb[i], p.ub[i]));
        q = model.clamp(&JointConfig(&q.0 + &qdot * params.dt));

        let (pe, oe) = tracking_errors(&model.ee_pose(&q)?, target)?;
        if trace {
            result.trace.push(IterationTrace {
                q: q.clone(),
                qdot: qdot.iter().copied().collect(),
                position_error: pe,
                orientation_error: oe,
                active_dampers: step.constraints.len(),
            });
        }
        result.iterations = it + 1;
        result.position_error = pe;
        result.orientation_error = oe;
        if pe < params.pos_tol && oe < params.ori_tol {
            result.converged = true;
            break;
        }
    }
    result.command = q;
    Ok(result)
}
