//! Rigid-body geometry: unit-quaternion rotations, poses, body-frame twists
//! and the exponential/logarithm maps that connect them.
//!
//! Rotations are stored as unit quaternions with a non-negative scalar part,
//! so two equal rotations always have identical components. Twists are
//! ordered `[linear, angular]` everywhere, including Jacobian rows.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle the exponential uses its Taylor expansion.
const EXP_TAYLOR: f64 = 1e-8;
/// Below this angle the SE(3) left-Jacobian coefficients use Taylor expansions.
const SE3_TAYLOR: f64 = 1e-4;
/// Distance from pi at which the logarithm is rejected.
pub const LOG_SINGULAR_MARGIN: f64 = 1e-6;

/// A rotation stored as a unit quaternion with `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from (possibly unnormalized) quaternion components.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::domain(format!(
                "quaternion [{w}, {x}, {y}, {z}] cannot be normalized"
            )));
        }
        Ok(Self::from_quaternion(q))
    }

    fn from_quaternion(q: Quaternion<f64>) -> Self {
        let q = if q.w < 0.0 { -q } else { q };
        // Already-unit input is kept bit for bit so serialized poses reload exactly.
        if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
            Rotation(UnitQuaternion::new_unchecked(q))
        } else {
            Rotation(UnitQuaternion::new_normalize(q))
        }
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        Self::from_quaternion(q.into_inner())
    }

    /// Rotation by `angle` about `axis`; the axis need not be normalized.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp(&(axis * (angle / n)))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_quaternion(Quaternion::new(c, 0.0, 0.0, s))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self::from_unit(self.0.inverse())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self::from_quaternion(self.0.quaternion() * other.0.quaternion())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w)
    }

    /// Angle of the relative rotation `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }

    /// Quaternion norm; exposed for invariant checks.
    pub fn norm(&self) -> f64 {
        self.0.quaternion().norm()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation[{w}, {x}, {y}, {z}]")
    }
}

/// Rotation vector (axis times angle) to rotation.
pub fn so3_exp(rotvec: &Vector3<f64>) -> Rotation {
    let theta = rotvec.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < EXP_TAYLOR {
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    let v = rotvec * k;
    Rotation::from_quaternion(Quaternion::new(w, v.x, v.y, v.z))
}

/// Rotation to its rotation vector, angle in `[0, pi]`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let q = r.0.quaternion();
    let (w, v) = (q.w, q.imag());
    let s = v.norm();
    if s < EXP_TAYLOR {
        // atan2(s, w) / s ≈ (1 - s²/(3w²)) / w
        v * (2.0 / w * (1.0 - s * s / (3.0 * w * w)))
    } else {
        v * (2.0 * s.atan2(w) / s)
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    w.cross_matrix()
}

/// Translation and angular displacement, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into(),
            angular: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|c| c.is_finite())
    }
}

/// A rigid transform: rotate, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: Rotation) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, Rotation::identity())
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(Vector3::zeros(), r)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation.rotate(&other.translation),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            translation: -r.rotate(&self.translation),
            rotation: r,
        }
    }

    /// `self⁻¹ ∘ other`, computed so that equal poses give an exact identity.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        let rotation = if self.rotation == other.rotation {
            Rotation::identity()
        } else {
            self.rotation.inverse().compose(&other.rotation)
        };
        Pose {
            translation: self
                .rotation
                .inverse_rotate(&(other.translation - self.translation)),
            rotation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation.rotate(p)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let rot = nalgebra::Rotation3::from_matrix(&r);
        Pose {
            translation: m.fixed_view::<3, 1>(0, 3).into(),
            rotation: Rotation::from_unit(UnitQuaternion::from_rotation_matrix(&rot)),
        }
    }
}

/// Twist to pose; the twist is interpreted in the body frame.
pub fn se3_exp(xi: &Twist) -> Pose {
    let w = xi.angular;
    let theta = w.norm();
    let (b, c) = if theta < SE3_TAYLOR {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    let wx = hat(&w);
    let v = Matrix3::identity() + wx * b + wx * wx * c;
    Pose {
        translation: v * xi.linear,
        rotation: so3_exp(&w),
    }
}

/// Pose to the body-frame twist whose exponential reproduces it.
pub fn se3_log(p: &Pose) -> Result<Twist> {
    let angle = p.rotation.angle();
    if angle >= PI - LOG_SINGULAR_MARGIN {
        return Err(Error::Singular { angle });
    }
    let w = so3_log(&p.rotation);
    let theta = w.norm();
    let d = if theta < SE3_TAYLOR {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
    };
    let wx = hat(&w);
    let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * d;
    Ok(Twist {
        linear: v_inv * p.translation,
        angular: w,
    })
}

/// Body-frame error twist that carries `current` onto `target`.
pub fn pose_error(current: &Pose, target: &Pose) -> Result<Twist> {
    se3_log(&current.relative_to(target))
}

/// Straight-line translation and shortest-arc slerp between two poses.
pub fn interpolate_pose(a: &Pose, b: &Pose, s: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!(
            "interpolation fraction {s} outside [0, 1]"
        )));
    }
    if s == 0.0 {
        return Ok(*a);
    }
    if s == 1.0 {
        return Ok(*b);
    }
    Ok(Pose {
        translation: a.translation + (b.translation - a.translation) * s,
        rotation: slerp(&a.rotation, &b.rotation, s),
    })
}

fn slerp(a: &Rotation, b: &Rotation, s: f64) -> Rotation {
    let qa = a.0.quaternion();
    let mut qb = *b.0.quaternion();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        return Rotation::from_quaternion(qa * (1.0 - s) + qb * s);
    }
    let omega = dot.min(1.0).acos();
    let sin_omega = omega.sin();
    let ka = ((1.0 - s) * omega).sin() / sin_omega;
    let kb = (s * omega).sin() / sin_omega;
    Rotation::from_quaternion(qa * ka + qb * kb)
}

/// Wire form of a pose: `{"pos": [x, y, z], "quat": [w, x, y, z]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        PoseJson {
            pos: p.translation.into(),
            quat: p.rotation.wxyz(),
        }
    }
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(j: PoseJson) -> Result<Self> {
        if j.pos.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("non-finite pose translation"));
        }
        let [w, x, y, z] = j.quat;
        Ok(Pose {
            translation: Vector3::from(j.pos),
            rotation: Rotation::from_wxyz(w, x, y, z)?,
        })
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseJson::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PoseJson::deserialize(d)?;
        Pose::try_from(j).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Rotation::from_wxyz(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rotvec() -> impl Strategy<Value = Vector3<f64>> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..(PI - 1e-3),
        )
            .prop_filter("nonzero axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-6)
            .prop_map(|(x, y, z, a)| Vector3::new(x, y, z).normalize() * a)
    }

    /// Rodrigues formula on matrices, independent of the quaternion path.
    fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
        let t = v.norm();
        if t == 0.0 {
            return Matrix3::identity();
        }
        let k = hat(&(v / t));
        Matrix3::identity() + k * t.sin() + k * k * (1.0 - t.cos())
    }

    /// Rotation-matrix logarithm via the trace formula.
    fn matrix_log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let t = c.acos();
        if t < 1e-12 {
            return Vector3::zeros();
        }
        let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        w * (t / (2.0 * t.sin()))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vector3::zeros()).wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_half_turn_about_z() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI));
        let [w, x, y, z] = r.wxyz();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-15);
        assert_eq!((x, y), (0.0, 0.0));
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn canonical_sign_is_enforced() {
        let r = Rotation::from_wxyz(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(r.wxyz()[0] > 0.0);
        assert!(Rotation::from_wxyz(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn log_identity_and_pure_translation() {
        assert_eq!(se3_log(&Pose::identity()).unwrap(), Twist::zero());
        let t = se3_log(&Pose::from_translation(Vector3::new(0.3, 0.0, 0.0))).unwrap();
        assert_eq!(t.linear, Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(t.angular, Vector3::zeros());
    }

    #[test]
    fn log_rejects_half_turn() {
        let p = Pose::from_rotation(so3_exp(&Vector3::new(0.0, PI, 0.0)));
        assert!(matches!(se3_log(&p), Err(Error::Singular { .. })));
    }

    #[test]
    fn pose_error_same_pose_is_zero() {
        let a = Pose::new(
            Vector3::new(0.4, -1.2, 0.9),
            so3_exp(&Vector3::new(0.3, -2.0, 0.7)),
        );
        let e = pose_error(&a, &a).unwrap();
        assert_eq!(e.linear, Vector3::zeros());
        assert!(e.angular.norm() < 1e-12);
    }

    #[test]
    fn pose_error_from_identity_is_translation() {
        let t = Vector3::new(0.1, -0.2, 0.3);
        let e = pose_error(&Pose::identity(), &Pose::from_translation(t)).unwrap();
        assert_eq!(e.linear, t);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Pose::new(Vector3::new(1.0, 2.0, 3.0), so3_exp(&Vector3::new(0.1, 0.2, 0.3)));
        let b = Pose::new(Vector3::new(-1.0, 0.0, 0.5), so3_exp(&Vector3::new(-1.0, 0.5, 2.0)));
        assert_eq!(interpolate_pose(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_pose(&a, &b, 1.0).unwrap(), b);
        let m = interpolate_pose(
            &Pose::identity(),
            &Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            0.5,
        )
        .unwrap();
        assert_eq!(m.translation, Vector3::new(0.5, 0.0, 0.0));
        assert!(interpolate_pose(&a, &b, 1.5).is_err());
        assert!(interpolate_pose(&a, &b, -0.1).is_err());
    }

    #[test]
    fn slerp_takes_short_arc() {
        let a = Rotation::about_z(0.0);
        let b = Rotation::about_z(3.0);
        // The same rotation with a flipped quaternion sign must give the same path.
        let q = b.wxyz();
        let b_neg = Rotation(UnitQuaternion::new_unchecked(Quaternion::new(-q[0], -q[1], -q[2], -q[3])));
        let pa = Pose::from_rotation(a);
        for s in [0.25, 0.5, 0.75] {
            let r1 = interpolate_pose(&pa, &Pose::from_rotation(b), s).unwrap().rotation;
            let r2 = interpolate_pose(&pa, &Pose::from_rotation(b_neg), s).unwrap().rotation;
            assert!(r1.angle_to(&r2) < 1e-12);
            assert_abs_diff_eq!(r1.angle(), 3.0 * s, epsilon = 1e-12);
        }
    }

    #[test]
    fn composition_chain_keeps_unit_norm() {
        let step = so3_exp(&Vector3::new(0.013, -0.021, 0.034));
        let mut r = Rotation::identity();
        for _ in 0..1000 {
            r = r.compose(&step);
            assert!((r.norm() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn so3_roundtrip_matches_matrix_oracle(v in rotvec()) {
            let r = so3_exp(&v);
            let back = so3_log(&r);
            prop_assert!((back - v).norm() < 1e-9);
            prop_assert!((r.matrix() - rodrigues(&v)).abs().max() < 1e-12);
            prop_assert!((matrix_log_so3(&r.matrix()) - v).norm() < 1e-7);
        }

        #[test]
        fn se3_roundtrip(v in rotvec(), t in proptest::array::uniform3(-2.0f64..2.0)) {
            let p = Pose::new(Vector3::from(t), so3_exp(&v));
            let xi = se3_log(&p).unwrap();
            let q = se3_exp(&xi);
            prop_assert!((q.translation - p.translation).norm() < 1e-8);
            prop_assert!(q.rotation.angle_to(&p.rotation) < 1e-8);
        }

        #[test]
        fn slerp_angle_is_monotone(v in rotvec(), w in rotvec()) {
            let a = Pose::from_rotation(so3_exp(&v));
            let b = Pose::from_rotation(so3_exp(&w));
            let mut last = 0.0;
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let ang = a.rotation.angle_to(&interpolate_pose(&a, &b, s).unwrap().rotation);
                prop_assert!(ang + 1e-12 >= last);
                last = ang;
            }
        }
    }
}
