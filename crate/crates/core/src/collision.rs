//! Sphere/capsule distance queries between robot-attached geoms and the
//! velocity-damper rows they contribute to the IK problem.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{RowDVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseJson};
use crate::model::{FrameId, FrameSet, JointConfig, RobotModel};

const PARALLEL_EPS: f64 = 1e-12;
const COINCIDENT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeomKind {
    Sphere,
    Capsule,
    /// Treated as a capsule with the same radius and half-length.
    Cylinder,
}

#[derive(Clone, Debug)]
pub struct Geom {
    pub name: String,
    pub kind: GeomKind,
    pub radius: f64,
    /// Half-length of the center segment along local z; zero for spheres.
    pub half_length: f64,
    pub frame: FrameId,
    pub offset: Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomDocument {
    pub name: String,
    pub kind: GeomKind,
    pub radius: f64,
    #[serde(default)]
    pub half_length: f64,
    pub frame: String,
    #[serde(default = "identity_pose_json")]
    pub offset: PoseJson,
}

fn identity_pose_json() -> PoseJson {
    Pose::identity().into()
}

impl Geom {
    pub fn sphere(name: &str, radius: f64, frame: FrameId, offset: Pose) -> Self {
        Geom {
            name: name.to_string(),
            kind: GeomKind::Sphere,
            radius,
            half_length: 0.0,
            frame,
            offset,
        }
    }

    pub fn capsule(name: &str, radius: f64, half_length: f64, frame: FrameId, offset: Pose) -> Self {
        Geom {
            name: name.to_string(),
            kind: GeomKind::Capsule,
            radius,
            half_length,
            frame,
            offset,
        }
    }

    pub(crate) fn from_document(doc: &GeomDocument, frames: &HashMap<String, FrameId>) -> Result<Self> {
        let frame = *frames.get(&doc.frame).ok_or_else(|| {
            Error::Model(format!("geom {:?} attached to unknown frame {:?}", doc.name, doc.frame))
        })?;
        if !(doc.radius > 0.0) {
            return Err(Error::Model(format!("geom {:?} needs radius > 0", doc.name)));
        }
        let half_length = match doc.kind {
            GeomKind::Sphere => 0.0,
            _ => doc.half_length,
        };
        if !(half_length >= 0.0) {
            return Err(Error::Model(format!("geom {:?} needs half_length >= 0", doc.name)));
        }
        Ok(Geom {
            name: doc.name.clone(),
            kind: doc.kind,
            radius: doc.radius,
            half_length,
            frame,
            offset: Pose::try_from(doc.offset)?,
        })
    }

    /// World pose of the geom center for the given frame poses.
    pub fn world_pose(&self, frames: &FrameSet) -> Pose {
        frames.pose(self.frame).compose(&self.offset)
    }

    /// Endpoints of the center segment for a geom centered at `pose`.
    fn segment(&self, pose: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        let axis = pose.rotation.rotate(&Vector3::z()) * self.half_length;
        (pose.translation - axis, pose.translation + axis)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionPair {
    pub a: usize,
    pub b: usize,
    pub name: String,
}

impl CollisionPair {
    pub fn new(a: &str, b: &str, geoms: &[Geom]) -> Result<Self> {
        if a == b {
            return Err(Error::Model(format!("collision pair ({a}, {b}) pairs a geom with itself")));
        }
        let find = |n: &str| {
            geoms
                .iter()
                .position(|g| g.name == n)
                .ok_or_else(|| Error::Model(format!("collision pair names unknown geom {n:?}")))
        };
        Ok(CollisionPair {
            a: find(a)?,
            b: find(b)?,
            name: format!("{a}|{b}"),
        })
    }
}

/// Closest-point query result. The normal points from `b` toward `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactInfo {
    /// Surface distance; negative when penetrating.
    pub distance: f64,
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Center lines touch, so the normal fell back to world +z.
    pub degenerate: bool,
}

/// Closest points of two segments `[p1, q1]` and `[p2, q2]`.
///
/// Parallel overlapping segments have a continuum of closest pairs; the
/// midpoint of the overlap is returned, which is the same pair regardless of
/// argument order.
pub fn closest_segment_points(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let point_on_2 = |x: &Vector3<f64>| -> Vector3<f64> {
        if e <= PARALLEL_EPS {
            *p2
        } else {
            p2 + d2 * ((x - p2).dot(&d2) / e).clamp(0.0, 1.0)
        }
    };

    if a <= PARALLEL_EPS && e <= PARALLEL_EPS {
        return (*p1, *p2);
    }
    if a <= PARALLEL_EPS {
        return (*p1, point_on_2(p1));
    }
    let c = d1.dot(&r);
    if e <= PARALLEL_EPS {
        let s = (-c / a).clamp(0.0, 1.0);
        return (p1 + d1 * s, *p2);
    }

    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    if denom <= PARALLEL_EPS * a * e {
        // Parallel: project segment 2 onto the parameter line of segment 1.
        let s0 = (p2 - p1).dot(&d1) / a;
        let s1 = (q2 - p1).dot(&d1) / a;
        let lo = s0.min(s1).max(0.0);
        let hi = s0.max(s1).min(1.0);
        let s = if lo <= hi {
            0.5 * (lo + hi)
        } else if s0.max(s1) < 0.0 {
            0.0
        } else {
            1.0
        };
        let c1 = p1 + d1 * s;
        let c2 = point_on_2(&c1);
        // Re-project so the pair is mutually closest when segment 2 is the shorter one.
        let s = ((c2 - p1).dot(&d1) / a).clamp(0.0, 1.0);
        return (p1 + d1 * s, c2);
    }

    let mut s = ((b * f - c * e) / denom).clamp(0.0, 1.0);
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (p1 + d1 * s, p2 + d2 * t)
}

/// Closest points between two geoms placed at world poses `pose_a`, `pose_b`.
pub fn closest_points(geom_a: &Geom, pose_a: &Pose, geom_b: &Geom, pose_b: &Pose) -> ContactInfo {
    let (pa, qa) = geom_a.segment(pose_a);
    let (pb, qb) = geom_b.segment(pose_b);
    let (ca, cb) = closest_segment_points(&pa, &qa, &pb, &qb);
    let delta = ca - cb;
    let center_dist = delta.norm();
    let (normal, degenerate) = if center_dist < COINCIDENT_EPS {
        tracing::warn!(a = %geom_a.name, b = %geom_b.name, "coincident geom centers, using +z normal");
        (Vector3::z(), true)
    } else {
        (delta / center_dist, false)
    };
    ContactInfo {
        distance: center_dist - geom_a.radius - geom_b.radius,
        point_a: ca - normal * geom_a.radius,
        point_b: cb + normal * geom_b.radius,
        normal,
        degenerate,
    }
}

/// Contact info for a declared pair at a given set of frame poses.
pub fn pair_contact(model: &RobotModel, frames: &FrameSet, pair: &CollisionPair) -> ContactInfo {
    let ga = &model.geoms[pair.a];
    let gb = &model.geoms[pair.b];
    closest_points(ga, &ga.world_pose(frames), gb, &gb.world_pose(frames))
}

/// Surface distance of every declared pair.
pub fn pair_distances(model: &RobotModel, frames: &FrameSet) -> Vec<(String, f64)> {
    model
        .collision_pairs
        .iter()
        .map(|p| (p.name.clone(), pair_contact(model, frames, p).distance))
        .collect()
}

fn check_pair(model: &RobotModel, pair: &CollisionPair) -> Result<()> {
    if pair.a >= model.geoms.len() || pair.b >= model.geoms.len() {
        return Err(Error::domain(format!("pair {} refers to geoms outside the model", pair.name)));
    }
    Ok(())
}

/// Row mapping joint velocity to the rate of change of pair separation
/// (positive means the geoms move apart).
pub fn contact_jacobian(
    model: &RobotModel,
    q: &JointConfig,
    pair: &CollisionPair,
    info: &ContactInfo,
) -> Result<RowDVector<f64>> {
    check_pair(model, pair)?;
    let frames = model.forward_kinematics(q)?;
    Ok(contact_jacobian_at(model, &frames, pair, info))
}

pub(crate) fn contact_jacobian_at(
    model: &RobotModel,
    frames: &FrameSet,
    pair: &CollisionPair,
    info: &ContactInfo,
) -> RowDVector<f64> {
    let fa = model.geoms[pair.a].frame;
    let fb = model.geoms[pair.b].frame;
    if fa == fb {
        return RowDVector::zeros(model.dofs());
    }
    let ja = model.world_point_linear_jacobian(frames, fa, &info.point_a);
    let jb = model.world_point_linear_jacobian(frames, fb, &info.point_b);
    info.normal.transpose() * (ja - jb)
}

/// Velocity-damper settings; distances in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamperParams {
    /// Clearance the damper drives toward.
    pub d_min: f64,
    /// Pairs farther apart than this contribute no constraint.
    pub detection_range: f64,
    /// Fraction of the remaining gap that may close per step, in (0, 1].
    pub gain: f64,
    /// Constant slack added to every bound.
    pub relaxation: f64,
}

impl Default for DamperParams {
    fn default() -> Self {
        DamperParams {
            d_min: 0.02,
            detection_range: 0.10,
            gain: 0.85,
            relaxation: 0.0,
        }
    }
}

impl DamperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::domain(format!("damper gain {} not in (0, 1]", self.gain)));
        }
        if !(self.relaxation >= 0.0) || !(self.d_min >= 0.0) || !(self.detection_range > self.d_min) {
            return Err(Error::domain("damper needs relaxation >= 0 and detection_range > d_min >= 0"));
        }
        Ok(())
    }

    /// Upper bound on approach speed for a pair at distance `d`.
    pub fn bound(&self, d: f64, dt: f64) -> f64 {
        self.gain * (d - self.d_min) / dt + self.relaxation
    }
}

/// One damper inequality `row · q̇ ≤ bound`.
#[derive(Clone, Debug)]
pub struct DamperConstraint {
    pub pair: String,
    pub distance: f64,
    pub row: RowDVector<f64>,
    pub bound: f64,
}

/// Damper rows for every declared pair inside the detection range.
pub fn active_constraints(
    model: &RobotModel,
    q: &JointConfig,
    dt: f64,
    params: &DamperParams,
) -> Result<Vec<DamperConstraint>> {
    let frames = model.forward_kinematics(q)?;
    Ok(active_constraints_at(model, &frames, dt, params))
}

pub(crate) fn active_constraints_at(
    model: &RobotModel,
    frames: &FrameSet,
    dt: f64,
    params: &DamperParams,
) -> Vec<DamperConstraint> {
    model
        .collision_pairs
        .iter()
        .filter_map(|pair| {
            let info = pair_contact(model, frames, pair);
            (info.distance < params.detection_range).then(|| DamperConstraint {
                pair: pair.name.clone(),
                distance: info.distance,
                row: -contact_jacobian_at(model, frames, pair, &info),
                bound: params.bound(info.distance, dt),
            })
        })
        .collect()
}

/// One line per constraint: pair name, distance, bound.
pub fn dump_constraints(constraints: &[DamperConstraint]) -> String {
    let mut out = String::new();
    for c in constraints {
        let _ = writeln!(out, "{} {:.9} {:.9}", c.pair, c.distance, c.bound);
    }
    out
}
