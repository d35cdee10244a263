//! Velocity dampers: ask the gripper to reach a point just behind the arm
//! mount, inside the base body, and compare the closest approach with and without the dampers.

use nalgebra::Vector3;
use wholebody::collision::{active_constraints, pair_distances};
use wholebody::geometry::Pose;
use wholebody::{wbc, RobotModel, WbcParams};

fn closest(model: &RobotModel, params: &WbcParams, target: &Pose, verbose: bool) -> wholebody::Result<(f64, String)> {
    let mut q = model.retract().clone();
    let mut best = (f64::INFINITY, String::new());
    for tick in 0..60 {
        if verbose && tick % 10 == 0 {
            for c in active_constraints(model, &q, params.dt, &params.collision)? {
                println!("tick {tick:2}  {:28} d = {:.4}  bound = {:+.4}", c.pair, c.distance, c.bound);
            }
        }
        q = wbc::solve(model, &q, target, params)?.command;
        for (pair, d) in pair_distances(model, &model.forward_kinematics(&q)?) {
            if d < best.0 {
                best = (d, pair);
            }
        }
    }
    Ok(best)
}

fn main() -> wholebody::Result<()> {
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let ee = model.ee_pose(model.retract())?;
    let target = Pose::new(Vector3::new(-0.3, 0.0, 0.3), ee.rotation);

    let (d, pair) = closest(&model, &params, &target, true)?;
    println!("dampers on:  closest approach {d:.4} m ({pair}), d_min {}", params.collision.d_min);
    let off = WbcParams { collision_enabled: false, ..params };
    let (d, pair) = closest(&model, &off, &target, false)?;
    println!("dampers off: closest approach {d:.4} m ({pair})");
    Ok(())
}
