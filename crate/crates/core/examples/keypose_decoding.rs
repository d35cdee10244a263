//! Point-cloud plumbing around a keypose policy: deprojection, saliency,
//! keypose decoding and distractor augmentation.

use nalgebra::Vector3;
use wholebody::executor::Mode;
use wholebody::geometry::{Pose, Rotation};
use wholebody::perception::{add_distractors, conditioned_saliency, decode_keypose, Aabb, CameraModel, PointCloud};

fn main() -> wholebody::Result<()> {
    // An 8x6 depth image of a flat table 0.8 m below a downward-looking camera.
    let extrinsics = Pose::new(Vector3::new(0.5, 0.0, 1.2), Rotation::from_wxyz(0.0, 1.0, 0.0, 0.0)?);
    let cam = CameraModel::new(6.0, 6.0, 3.5, 2.5, 8, 6, extrinsics)?;
    let depth = vec![0.8; 48];
    let cloud = cam.deproject_image(&depth, None)?;
    println!("{} points, first {:.3?}", cloud.len(), cloud.points()[0].as_slice());

    let keypoint = Vector3::new(0.55, 0.05, 0.4);
    let saliency = conditioned_saliency(&cloud, &keypoint);
    let offsets = vec![Vector3::new(0.0, 0.0, 0.1); cloud.len()];
    let action = decode_keypose(&cloud, &saliency, &offsets, Rotation::identity(), 1.0, Mode::Dense)?;
    println!("decoded keypose at {:.3?} (gripper {}, next {})",
        action.pose.translation.as_slice(), action.gripper, action.next_mode);

    let bounds = Aabb::new([0.2, -0.3, 0.3], [0.8, 0.3, 0.5])?;
    let augmented = add_distractors(&cloud, 3, 20, &bounds, 7)?;
    println!("with distractors: {} points", augmented.len());

    let bytes = augmented.to_bytes(false);
    let back = PointCloud::read_from(&bytes[..])?;
    let err = back
        .points()
        .iter()
        .zip(augmented.points())
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    println!("binary round trip (f32): {} bytes, max error {err:.1e}", bytes.len());
    Ok(())
}
