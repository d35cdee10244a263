//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector6};
use rand::Rng;
use wholebody::geometry::{Pose, Twist};
use wholebody::model::{JointConfig, RobotModel, BASE_DOFS};
use wholebody::qp::QpProblem;

pub fn hat3(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// 4×4 twist matrix `[ŵ v; 0 0]`.
pub fn hat6(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&xi.angular));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.linear);
    m
}

pub fn vee6(m: &Matrix4<f64>) -> Twist {
    Twist::new(
        m.fixed_view::<3, 1>(0, 3).into_owned(),
        vee3(&m.fixed_view::<3, 3>(0, 0).into_owned()),
    )
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn mat_exp(a: &Matrix4<f64>) -> Matrix4<f64> {
    let mut k = 0;
    let mut s = *a;
    while s.norm() > 0.25 {
        s /= 2.0;
        k += 1;
    }
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for i in 1..30 {
        term = term * s / i as f64;
        sum += term;
    }
    for _ in 0..k {
        sum = sum * sum;
    }
    sum
}

/// Principal square root by the Denman-Beavers iteration.
fn mat_sqrt(a: &Matrix4<f64>) -> Matrix4<f64> {
    let mut y = *a;
    let mut z = Matrix4::identity();
    for _ in 0..100 {
        let yi = y.try_inverse().expect("invertible");
        let zi = z.try_inverse().expect("invertible");
        let ny = (y + zi) * 0.5;
        let nz = (z + yi) * 0.5;
        let done = (ny - y).norm() < 1e-15;
        y = ny;
        z = nz;
        if done {
            break;
        }
    }
    y
}

/// Matrix logarithm by inverse scaling and squaring: repeated square roots
/// until near identity, then the Mercator series.
pub fn mat_log(a: &Matrix4<f64>) -> Matrix4<f64> {
    let mut x = *a;
    let mut k = 0;
    while (x - Matrix4::identity()).norm() > 0.05 {
        x = mat_sqrt(&x);
        k += 1;
    }
    let e = x - Matrix4::identity();
    let mut power = e;
    let mut sum = Matrix4::zeros();
    for i in 1..40 {
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        sum += power * (sign / i as f64);
        power *= e;
    }
    sum * 2f64.powi(k)
}

pub fn random_twist<R: Rng>(rng: &mut R, max_angle: f64, max_lin: f64) -> Twist {
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() < 1.0 {
            break v.normalize();
        }
    };
    let angle = rng.random_range(0.0..max_angle);
    let lin = Vector3::from_fn(|_, _| rng.random_range(-max_lin..max_lin));
    Twist::new(lin, axis * angle)
}

pub fn random_config<R: Rng>(model: &RobotModel, rng: &mut R, base_range: f64) -> JointConfig {
    JointConfig::new(
        (0..model.dofs())
            .map(|i| {
                if i < 2 && base_range > 0.0 {
                    rng.random_range(-base_range..base_range)
                } else if i < 2 {
                    0.0
                } else if i == 2 {
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
                } else {
                    rng.random_range(model.q_min()[i]..model.q_max()[i])
                }
            })
            .collect(),
    )
}

/// Body-frame Jacobian by central differences of forward kinematics. Linear
/// rows differentiate the frame origin, angular rows the rotation matrix.
pub fn fd_body_jacobian(model: &RobotModel, q: &JointConfig, h: f64) -> DMatrix<f64> {
    let n = model.dofs();
    let p0 = model.ee_pose(q).unwrap();
    let r0t = p0.rotation.matrix().transpose();
    let mut jac = DMatrix::zeros(6, n);
    for j in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        let (a, b): (Pose, Pose) = (model.ee_pose(&qp).unwrap(), model.ee_pose(&qm).unwrap());
        let lin = r0t * (a.translation - b.translation) / (2.0 * h);
        let dr = r0t * (a.rotation.matrix() - b.rotation.matrix()) / (2.0 * h);
        let ang = vee3(&dr);
        for k in 0..3 {
            jac[(k, j)] = lin[k];
            jac[(3 + k, j)] = ang[k];
        }
    }
    jac
}

/// Reference QP solution from accelerated projected gradient on the dual,
/// with bounds folded into the inequality rows. Stops once the primal
/// iterate is feasible to 1e-11 with a duality gap below 1e-12 (relative),
/// or after `iters` iterations. Returns the primal iterate.
pub fn dual_fista_qp(p: &QpProblem, iters: usize) -> DVector<f64> {
    let n = p.dim();
    let m = p.rows();
    let mut c = DMatrix::zeros(m + 2 * n, n);
    let mut d = DVector::zeros(m + 2 * n);
    c.view_mut((0, 0), (m, n)).copy_from(&p.a);
    d.rows_mut(0, m).copy_from(&p.b);
    for i in 0..n {
        c[(m + i, i)] = 1.0;
        d[m + i] = p.ub[i];
        c[(m + n + i, i)] = -1.0;
        d[m + n + i] = -p.lb[i];
    }
    let hinv = p.h.clone().try_inverse().expect("positive definite");
    let q = &c * &hinv * c.transpose();
    let step = 1.0 / q.symmetric_eigenvalues().max();
    let primal = |lam: &DVector<f64>| -&hinv * (&p.g + c.transpose() * lam);
    let mut lam = DVector::zeros(m + 2 * n);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for k in 0..iters {
        if k % 200 == 0 {
            let x = primal(&lam);
            let violation = (&c * &x - &d).max().max(0.0);
            let f = p.objective(&x);
            let dual = -0.5 * x.dot(&(&p.h * &x)) - d.dot(&lam);
            if violation <= 1e-11 && (f - dual).abs() <= 1e-12 * f.abs().max(1.0) {
                break;
            }
        }
        let x = primal(&y);
        let grad = &c * &x - &d;
        let next = (&y + grad * step).map(|v| v.max(0.0));
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        // Restart when momentum points uphill.
        if (&next - &lam).dot(&(&y - &next)) > 0.0 {
            y = next.clone();
            t = 1.0;
        } else {
            y = &next + (&next - &lam) * ((t - 1.0) / tn);
            t = tn;
        }
        lam = next;
    }
    primal(&lam)
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let lb = DVector::from_fn(n, |i, _| x0[i] - rng.random_range(0.05..1.0));
    let ub = DVector::from_fn(n, |i, _| x0[i] + rng.random_range(0.05..1.0));
    QpProblem { h, g, a, b, lb, ub }
}

/// Orthonormal basis of the null space of the end-effector Jacobian's arm
/// block, from an SVD of the block padded to square with zero rows.
pub fn arm_null_space(model: &RobotModel, q: &JointConfig) -> DMatrix<f64> {
    let k = model.arm_dofs();
    let jac = model.geometric_jacobian(q, "ee", &Vector3::zeros()).unwrap();
    let padded = DMatrix::from_fn(k, k, |r, c| if r < 6 { jac[(r, BASE_DOFS + c)] } else { 0.0 });
    let svd = padded.svd(false, true);
    let vt = svd.v_t.unwrap();
    let idx: Vec<usize> = (0..k).filter(|&i| svd.singular_values[i] < 1e-9).collect();
    DMatrix::from_fn(k, idx.len(), |r, c| vt[(idx[c], r)])
}

pub fn vec6(t: &Twist) -> Vector6<f64> {
    t.to_vector()
}
