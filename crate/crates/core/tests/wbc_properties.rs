mod common;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use wholebody::geometry::{Pose, Rotation};
use wholebody::model::BASE_DOFS;
use wholebody::{wbc, RobotModel, WbcParams};

fn arm_distance(model: &RobotModel, q: &wholebody::JointConfig) -> f64 {
    (BASE_DOFS..model.dofs())
        .map(|i| (q[i] - model.retract()[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// 10⁴ independent solves from random in-limit configurations toward random
/// nearby poses: every inner velocity inside the velocity box, every inner
/// configuration inside the position box.
#[test]
fn ten_thousand_random_solves_respect_limits() {
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let v_max = model.velocity_limits();
    let (lo, hi) = (model.q_min(), model.q_max());
    let stats: Vec<(usize, f64)> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let q = common::random_config(&model, &mut rng, 1.0);
            let ee = model.ee_pose(&q).unwrap();
            let offset = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let turn = Rotation::from_axis_angle(
                &Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                rng.random_range(0.0..1.5),
            );
            let target = Pose::new(ee.translation + offset, turn.compose(&ee.rotation));
            let r = wbc::solve_traced(&model, &q, &target, &params).unwrap();
            let mut vel = 0;
            let mut pos = 0.0f64;
            for it in &r.trace {
                vel += it.qdot.iter().zip(v_max.iter()).filter(|(v, m)| v.abs() > **m).count();
                for k in 0..model.dofs() {
                    pos = pos.max((lo[k] - it.q[k]).max(it.q[k] - hi[k]));
                }
            }
            (vel, pos)
        })
        .collect();
    let vel: usize = stats.iter().map(|s| s.0).sum();
    let pos = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    assert_eq!(vel, 0, "velocity-limit violations");
    assert!(pos <= 1e-9, "position-limit violation {pos:e}");
}

/// Without an end-effector task the posture term alone pulls the arm back
/// to the retract posture, strictly monotonically.
#[test]
fn posture_only_solves_converge_monotonically_to_retract() {
    let model = RobotModel::reference();
    let params = WbcParams { ee_position_weight: 0.0, ee_orientation_weight: 0.0, ..WbcParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let mut q = model.retract().clone();
        for i in BASE_DOFS..model.dofs() {
            q[i] = (q[i] + rng.random_range(-0.6..0.6)).clamp(model.q_min()[i], model.q_max()[i]);
        }
        let target = model.ee_pose(&q).unwrap();
        let mut d = arm_distance(&model, &q);
        let d0 = d;
        for _ in 0..200 {
            q = wbc::solve(&model, &q, &target, &params).unwrap().command;
            let next = arm_distance(&model, &q);
            assert!(next < d || next == 0.0, "posture distance rose from {d} to {next}");
            d = next;
        }
        assert!(d < 0.5 * d0, "{d0} -> {d}");
    }
}

/// Bit-identical commands for identical inputs, including across threads.
#[test]
fn solves_are_bit_deterministic_across_threads() {
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases: Vec<_> = (0..64)
        .map(|_| {
            let q = common::random_config(&model, &mut rng, 0.5);
            let ee = model.ee_pose(&q).unwrap();
            (q, Pose::new(ee.translation + Vector3::new(0.1, -0.05, 0.08), ee.rotation))
        })
        .collect();
    let serial: Vec<_> = cases.iter().map(|(q, t)| wbc::solve(&model, q, t, &params).unwrap().command).collect();
    let parallel: Vec<_> = cases.par_iter().map(|(q, t)| wbc::solve(&model, q, t, &params).unwrap().command).collect();
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
