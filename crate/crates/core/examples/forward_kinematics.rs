//! Forward kinematics and Jacobians of the reference mobile manipulator.

use nalgebra::Vector3;
use wholebody::collision::pair_distances;
use wholebody::RobotModel;

fn main() -> wholebody::Result<()> {
    let model = RobotModel::reference();
    println!("{}: {} DoF ({} arm joints)", model.name, model.dofs(), model.arm_dofs());
    let mut q = model.retract().clone();
    q[0] = 0.4;
    q[2] = 0.5;
    let frames = model.forward_kinematics(&q)?;
    let ee = frames.ee();
    println!("q          {:.3?}", q.as_slice());
    println!("ee pos     {:.4?}", ee.translation.as_slice());
    println!("ee quat    {:.4?}", ee.rotation.wxyz());

    let jac = model.body_jacobian(&frames, model.frame("ee")?, &Vector3::zeros());
    println!("body Jacobian (rows: vx vy vz wx wy wz):");
    for r in 0..6 {
        let row: Vec<String> = (0..model.dofs()).map(|c| format!("{:7.3}", jac[(r, c)])).collect();
        println!("  {}", row.join(" "));
    }
    let sv = jac.svd(false, false).singular_values;
    println!("singular values {:.3?}", sv.as_slice());

    println!("collision pair distances:");
    for (pair, d) in pair_distances(&model, &frames) {
        println!("  {pair:32} {d:.4}");
    }
    Ok(())
}
