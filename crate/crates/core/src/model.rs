//! Kinematic model of a holonomic base carrying a serial revolute arm.
//!
//! The base contributes three DoFs stacked in the world frame (prismatic x,
//! prismatic y, revolute yaw); arm joints follow in chain order. A joint
//! configuration is therefore `[x, y, theta, q_1, ..., q_N]`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DVector, Matrix3xX, Matrix6xX, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{CollisionPair, Geom, GeomDocument};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

pub const BASE_DOFS: usize = 3;

const AXIS_UNIT_TOL: f64 = 1e-9;

static REFERENCE_MODEL: &str = include_str!("../models/reference_gen3_mobile.json");

/// Joint positions ordered `[x, y, theta, arm...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", from = "Vec<f64>")]
pub struct JointConfig(pub DVector<f64>);

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig::new(v)
    }
}

impl From<JointConfig> for Vec<f64> {
    fn from(q: JointConfig) -> Self {
        q.0.as_slice().to_vec()
    }
}

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Self {
        JointConfig(DVector::from_vec(values))
    }

    pub fn zeros(dofs: usize) -> Self {
        JointConfig(DVector::zeros(dofs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn base(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn arm(&self) -> &[f64] {
        &self.0.as_slice()[BASE_DOFS..]
    }

    /// Parses a comma-separated list of joint values.
    pub fn parse_csv(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::domain(format!("bad joint value {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(values))
    }
}

impl std::ops::Index<usize> for JointConfig {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointConfig {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Identifies a frame of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameId {
    /// Static world frame; never moves.
    World,
    Base,
    /// Child link of arm joint `i` (0-based).
    Link(usize),
    EndEffector,
    /// A fixed frame declared in the model, e.g. a camera mount.
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct ArmJoint {
    pub name: String,
    pub parent_transform: Pose,
    pub axis: Vector3<f64>,
    pub pos_limits: (f64, f64),
    pub vel_limit: f64,
}

#[derive(Clone, Debug)]
pub struct FixedFrame {
    pub name: String,
    pub parent: FrameId,
    pub transform: Pose,
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<ArmJoint>,
    pub ee_transform: Pose,
    pub fixed_frames: Vec<FixedFrame>,
    pub geoms: Vec<Geom>,
    pub collision_pairs: Vec<CollisionPair>,
    q_min: DVector<f64>,
    q_max: DVector<f64>,
    v_max: DVector<f64>,
    retract: JointConfig,
    frames: HashMap<String, FrameId>,
    document: ModelDocument,
}

/// World poses of every frame for one configuration.
#[derive(Clone, Debug)]
pub struct FrameSet {
    pub base: Pose,
    pub links: Vec<Pose>,
    pub end_effector: Pose,
    pub fixed: Vec<Pose>,
}

impl FrameSet {
    pub fn pose(&self, frame: FrameId) -> Pose {
        match frame {
            FrameId::World => Pose::identity(),
            FrameId::Base => self.base,
            FrameId::Link(i) => self.links[i],
            FrameId::EndEffector => self.end_effector,
            FrameId::Fixed(i) => self.fixed[i],
        }
    }

    pub fn ee(&self) -> &Pose {
        &self.end_effector
    }
}

impl RobotModel {
    /// The bundled 7-DoF arm on a holonomic base.
    pub fn reference() -> Self {
        Self::from_json_str(REFERENCE_MODEL).expect("bundled reference model is valid")
    }

    pub fn reference_document() -> &'static str {
        REFERENCE_MODEL
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("schema violation: {e}")))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let n = doc.arm_joints.len();
        if n == 0 {
            return Err(Error::Model("model needs at least one arm joint".into()));
        }
        let dofs = BASE_DOFS + n;
        let mut q_min = DVector::zeros(dofs);
        let mut q_max = DVector::zeros(dofs);
        let mut v_max = DVector::zeros(dofs);

        for i in 0..BASE_DOFS {
            let [lo, hi] = doc.base.pos_limits[i];
            q_min[i] = lo.unwrap_or(f64::NEG_INFINITY);
            q_max[i] = hi.unwrap_or(f64::INFINITY);
            v_max[i] = doc.base.vel_limits[i];
        }

        let mut frames = HashMap::new();
        frames.insert("world".to_string(), FrameId::World);
        frames.insert("base".to_string(), FrameId::Base);
        frames.insert("ee".to_string(), FrameId::EndEffector);

        let mut joints = Vec::with_capacity(n);
        for (j, jd) in doc.arm_joints.iter().enumerate() {
            let dof = BASE_DOFS + j;
            let axis = Vector3::from(jd.axis);
            if (axis.norm() - 1.0).abs() > AXIS_UNIT_TOL {
                return Err(Error::Model(format!(
                    "joint {:?} (DoF {dof}) has non-unit axis {:?}",
                    jd.name, jd.axis
                )));
            }
            q_min[dof] = jd.pos_limits[0];
            q_max[dof] = jd.pos_limits[1];
            v_max[dof] = jd.vel_limit;
            if frames.insert(jd.name.clone(), FrameId::Link(j)).is_some() {
                return Err(Error::Model(format!("duplicate frame name {:?}", jd.name)));
            }
            joints.push(ArmJoint {
                name: jd.name.clone(),
                parent_transform: Pose::try_from(jd.parent_transform)?,
                axis,
                pos_limits: (jd.pos_limits[0], jd.pos_limits[1]),
                vel_limit: jd.vel_limit,
            });
        }

        for i in 0..dofs {
            if q_min[i].is_nan() || q_max[i].is_nan() || q_min[i] > q_max[i] {
                return Err(Error::Model(format!(
                    "position limits of DoF {i} are inconsistent: min {} > max {}",
                    q_min[i], q_max[i]
                )));
            }
            if !(v_max[i] > 0.0) || !v_max[i].is_finite() {
                return Err(Error::Model(format!(
                    "velocity limit of DoF {i} must be positive and finite, got {}",
                    v_max[i]
                )));
            }
        }

        let mut fixed_frames = Vec::with_capacity(doc.frames.len());
        for (k, fd) in doc.frames.iter().enumerate() {
            let parent = *frames.get(&fd.parent).ok_or_else(|| {
                Error::Model(format!("frame {:?} has unknown parent {:?}", fd.name, fd.parent))
            })?;
            if frames.insert(fd.name.clone(), FrameId::Fixed(k)).is_some() {
                return Err(Error::Model(format!("duplicate frame name {:?}", fd.name)));
            }
            fixed_frames.push(FixedFrame {
                name: fd.name.clone(),
                parent,
                transform: Pose::try_from(fd.transform)?,
            });
        }

        if doc.retract_posture.len() != dofs {
            return Err(Error::Model(format!(
                "retract posture has {} values, model has {dofs} DoFs",
                doc.retract_posture.len()
            )));
        }
        let retract = JointConfig::new(doc.retract_posture.clone());
        for i in 0..dofs {
            if retract[i] < q_min[i] || retract[i] > q_max[i] {
                return Err(Error::Model(format!(
                    "retract posture value {} for DoF {i} outside [{}, {}]",
                    retract[i], q_min[i], q_max[i]
                )));
            }
        }

        let geoms = doc
            .geoms
            .iter()
            .map(|g| Geom::from_document(g, &frames))
            .collect::<Result<Vec<_>>>()?;
        let collision_pairs = doc
            .collision_pairs
            .iter()
            .map(|[a, b]| CollisionPair::new(a, b, &geoms))
            .collect::<Result<Vec<_>>>()?;

        Ok(RobotModel {
            name: doc.name.clone(),
            joints,
            ee_transform: Pose::try_from(doc.ee_transform)?,
            fixed_frames,
            geoms,
            collision_pairs,
            q_min,
            q_max,
            v_max,
            retract,
            frames,
            document: doc,
        })
    }

    pub fn dofs(&self) -> usize {
        BASE_DOFS + self.joints.len()
    }

    pub fn arm_dofs(&self) -> usize {
        self.joints.len()
    }

    pub fn q_min(&self) -> &DVector<f64> {
        &self.q_min
    }

    pub fn q_max(&self) -> &DVector<f64> {
        &self.q_max
    }

    /// Symmetric velocity limit magnitude per DoF.
    pub fn velocity_limits(&self) -> &DVector<f64> {
        &self.v_max
    }

    pub fn retract(&self) -> &JointConfig {
        &self.retract
    }

    pub fn document(&self) -> &ModelDocument {
        &self.document
    }

    /// SHA-256 of the canonical model document.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.document).expect("model document serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn frame(&self, name: &str) -> Result<FrameId> {
        self.frames
            .get(name)
            .copied()
            .ok_or_else(|| Error::domain(format!("unknown frame {name:?}")))
    }

    pub fn frame_name(&self, frame: FrameId) -> &str {
        match frame {
            FrameId::World => "world",
            FrameId::Base => "base",
            FrameId::EndEffector => "ee",
            FrameId::Link(i) => &self.joints[i].name,
            FrameId::Fixed(i) => &self.fixed_frames[i].name,
        }
    }

    /// Number of arm joints that move `frame`.
    fn arm_depth(&self, frame: FrameId) -> usize {
        match frame {
            FrameId::World | FrameId::Base => 0,
            FrameId::Link(i) => i + 1,
            FrameId::EndEffector => self.joints.len(),
            FrameId::Fixed(k) => self.arm_depth(self.fixed_frames[k].parent),
        }
    }

    fn moves_with_base(&self, frame: FrameId) -> bool {
        match frame {
            FrameId::World => false,
            FrameId::Fixed(k) => self.moves_with_base(self.fixed_frames[k].parent),
            _ => true,
        }
    }

    pub fn check_config(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dofs() {
            return Err(Error::domain(format!(
                "configuration has {} values, model has {} DoFs",
                q.len(),
                self.dofs()
            )));
        }
        if q.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("configuration has non-finite values"));
        }
        Ok(())
    }

    /// First DoF farther than `tol` outside its position limits.
    pub fn limit_violation(&self, q: &JointConfig, tol: f64) -> Option<usize> {
        (0..self.dofs()).find(|&i| q[i] < self.q_min[i] - tol || q[i] > self.q_max[i] + tol)
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = q.clone();
        for i in 0..self.dofs() {
            out[i] = q[i].clamp(self.q_min[i], self.q_max[i]);
        }
        out
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<FrameSet> {
        self.check_config(q)?;
        let [x, y, theta] = q.base();
        let base = Pose::new(Vector3::new(x, y, 0.0), Rotation::about_z(theta));
        let mut links = Vec::with_capacity(self.joints.len());
        let mut current = base;
        for (j, joint) in self.joints.iter().enumerate() {
            let rot = Rotation::from_axis_angle(&joint.axis, q[BASE_DOFS + j]);
            current = current
                .compose(&joint.parent_transform)
                .compose(&Pose::from_rotation(rot));
            links.push(current);
        }
        let end_effector = current.compose(&self.ee_transform);
        let mut set = FrameSet {
            base,
            links,
            end_effector,
            fixed: Vec::with_capacity(self.fixed_frames.len()),
        };
        for f in &self.fixed_frames {
            let pose = set.pose(f.parent).compose(&f.transform);
            set.fixed.push(pose);
        }
        Ok(set)
    }

    pub fn ee_pose(&self, q: &JointConfig) -> Result<Pose> {
        Ok(self.forward_kinematics(q)?.end_effector)
    }

    /// World-frame Jacobian of a world point rigidly attached to `frame`:
    /// rows are `[linear; angular]`.
    pub fn world_point_jacobian(
        &self,
        frames: &FrameSet,
        frame: FrameId,
        point: &Vector3<f64>,
    ) -> Matrix6xX<f64> {
        let mut jac = Matrix6xX::zeros(self.dofs());
        if !self.moves_with_base(frame) {
            return jac;
        }
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let z = Vector3::z();
        let lin = z.cross(&(point - frames.base.translation));
        jac.fixed_view_mut::<3, 1>(0, 2).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, 2).copy_from(&z);
        for j in 0..self.arm_depth(frame) {
            let link = &frames.links[j];
            let axis = link.rotation.rotate(&self.joints[j].axis);
            let lin = axis.cross(&(point - link.translation));
            jac.fixed_view_mut::<3, 1>(0, BASE_DOFS + j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, BASE_DOFS + j).copy_from(&axis);
        }
        jac
    }

    /// Linear-velocity rows of [`world_point_jacobian`](Self::world_point_jacobian).
    pub fn world_point_linear_jacobian(
        &self,
        frames: &FrameSet,
        frame: FrameId,
        point: &Vector3<f64>,
    ) -> Matrix3xX<f64> {
        self.world_point_jacobian(frames, frame, point)
            .fixed_rows::<3>(0)
            .into_owned()
    }

    /// Body-frame geometric Jacobian of the point `frame ∘ point_offset`.
    ///
    /// Column `i` is the twist `[v; w]` induced by unit velocity of DoF `i`,
    /// expressed in the axes of `frame`, matching the convention of
    /// [`pose_error`](crate::geometry::pose_error).
    pub fn geometric_jacobian(
        &self,
        q: &JointConfig,
        frame: &str,
        point_offset: &Vector3<f64>,
    ) -> Result<Matrix6xX<f64>> {
        let id = self.frame(frame)?;
        let frames = self.forward_kinematics(q)?;
        Ok(self.body_jacobian(&frames, id, point_offset))
    }

    pub fn body_jacobian(
        &self,
        frames: &FrameSet,
        frame: FrameId,
        point_offset: &Vector3<f64>,
    ) -> Matrix6xX<f64> {
        let pose = frames.pose(frame);
        let point = pose.transform_point(point_offset);
        let mut jac = self.world_point_jacobian(frames, frame, &point);
        let rt = pose.rotation.matrix().transpose();
        for mut col in jac.column_iter_mut() {
            let lin = rt * col.fixed_rows::<3>(0);
            let ang = rt * col.fixed_rows::<3>(3);
            col.fixed_rows_mut::<3>(0).copy_from(&lin);
            col.fixed_rows_mut::<3>(3).copy_from(&ang);
        }
        jac
    }
}

impl fmt::Display for RobotModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} DoF: 3 base + {} arm)", self.name, self.dofs(), self.arm_dofs())
    }
}

/// On-disk model format.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub base: BaseDocument,
    pub arm_joints: Vec<JointDocument>,
    pub ee_transform: crate::geometry::PoseJson,
    pub retract_posture: Vec<f64>,
    #[serde(default)]
    pub frames: Vec<FrameDocument>,
    #[serde(default)]
    pub geoms: Vec<GeomDocument>,
    #[serde(default)]
    pub collision_pairs: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDocument {
    /// `[lo, hi]` per base DoF; `null` means unbounded.
    pub pos_limits: [[Option<f64>; 2]; 3],
    pub vel_limits: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDocument {
    pub name: String,
    pub parent_transform: crate::geometry::PoseJson,
    pub axis: [f64; 3],
    pub pos_limits: [f64; 2],
    pub vel_limit: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDocument {
    pub name: String,
    pub parent: String,
    pub transform: crate::geometry::PoseJson,
}
