//! SE(3) exponential and logarithm, pose errors and interpolation.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use wholebody::geometry::{interpolate_pose, pose_error, se3_exp, se3_log, Pose, Rotation, Twist};

fn main() -> wholebody::Result<()> {
    let xi = Twist::new(Vector3::new(0.3, -0.1, 0.2), Vector3::new(0.0, 0.0, FRAC_PI_2));
    let p = se3_exp(&xi);
    println!("exp(xi)      pos {:?} quat {:?}", p.translation.as_slice(), p.rotation.wxyz());
    let back = se3_log(&p)?;
    println!("log(exp(xi)) {:?}", back.to_vector().as_slice());

    let a = Pose::new(Vector3::new(0.5, 0.0, 0.4), Rotation::identity());
    let b = Pose::new(Vector3::new(0.6, 0.1, 0.4), Rotation::about_z(0.3));
    let e = pose_error(&a, &b)?;
    println!("body-frame error a -> b: lin {:?} ang {:?}", e.linear.as_slice(), e.angular.as_slice());

    for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let m = interpolate_pose(&a, &b, s)?;
        println!("s = {s:4}: pos {:.3?} yaw {:.3}", m.translation.as_slice(), m.rotation.angle());
    }

    // Half turns have no unique logarithm.
    let flip = Pose::from_rotation(Rotation::about_z(std::f64::consts::PI));
    println!("log of a half turn: {}", se3_log(&flip).unwrap_err());
    Ok(())
}
