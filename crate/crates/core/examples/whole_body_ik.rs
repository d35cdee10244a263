//! One whole-body solve with its inner iterations, then a short closed-loop
//! reach to a target that needs the base to move.

use nalgebra::Vector3;
use wholebody::geometry::{Pose, Rotation};
use wholebody::{wbc, RobotModel, WbcParams};

fn main() -> wholebody::Result<()> {
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let q = model.retract().clone();
    let ee = model.ee_pose(&q)?;
    let near = Pose::new(ee.translation + Vector3::new(0.0, 0.0, 0.05), ee.rotation);
    let r = wbc::solve_traced(&model, &q, &near, &params)?;
    println!("5 cm lift: converged {} in {} iterations", r.converged, r.iterations);
    for (i, t) in r.trace.iter().enumerate() {
        println!("  iter {i:2}: pos {:.2e} ori {:.2e} dampers {}", t.position_error, t.orientation_error, t.active_dampers);
    }

    let far = Pose::new(Vector3::new(1.4, 0.8, 0.3), Rotation::about_z(1.2).compose(&ee.rotation));
    let mut q = q;
    for tick in 1..=60 {
        let r = wbc::solve(&model, &q, &far, &params)?;
        q = r.command;
        if tick % 5 == 0 || r.converged {
            println!("tick {tick:2}: base ({:.3}, {:.3}, {:.3}) pos err {:.2e} ori err {:.2e}",
                q[0], q[1], q[2], r.position_error, r.orientation_error);
        }
        if r.converged {
            break;
        }
    }
    Ok(())
}
