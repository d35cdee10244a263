//! Geometry around a point-cloud keypose policy: camera deprojection,
//! salient-point decoding, conditioned saliency maps and distractor
//! augmentation. No learned components live here.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::Mode;
use crate::geometry::{Pose, Rotation};

/// Regularizer added to point-keypoint distances, meters.
pub const SALIENCY_DELTA: f64 = 1e-6;
/// Standard deviation of a distractor cluster, meters.
pub const DISTRACTOR_SIGMA: f64 = 0.02;
/// Distractor offsets are truncated at this many standard deviations.
pub const DISTRACTOR_TRUNCATION: f64 = 4.0;

const MAGIC: &[u8; 4] = b"WBPC";

/// A world-frame point cloud with optional per-point RGB in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::domain(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::domain(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
            if c.iter().flat_map(|v| v.iter()).any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::domain("colors must lie in [0, 1]"));
            }
        }
        Ok(PointCloud { points, colors })
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    pub fn translated(&self, t: &Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + t).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Binary little-endian form: magic, `M: u32`, `has_color: u8`, then
    /// `M×3` f32 positions and, if present, `M×3` f32 colors. With
    /// `with_color = false` the color channel is dropped.
    pub fn write_to<W: Write>(&self, mut w: W, with_color: bool) -> std::io::Result<()> {
        let colors = self.colors.as_ref().filter(|_| with_color);
        w.write_all(MAGIC)?;
        w.write_all(&(self.points.len() as u32).to_le_bytes())?;
        w.write_all(&[colors.is_some() as u8])?;
        for v in self.points.iter().chain(colors.into_iter().flatten()) {
            for c in v.iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, with_color: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.len() * 24);
        self.write_to(&mut out, with_color).expect("writing to a Vec");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::domain(format!("point cloud binary: {what}"));
        let mut header = [0u8; 9];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let m = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let has_color = match header[8] {
            0 => false,
            1 => true,
            _ => return Err(bad("has_color flag must be 0 or 1")),
        };
        let mut read_block = || -> Result<Vec<Vector3<f64>>> {
            let mut buf = vec![0u8; m * 12];
            r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
            Ok(buf
                .chunks_exact(12)
                .map(|c| {
                    let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
                    Vector3::new(f(0), f(1), f(2))
                })
                .collect())
        };
        let points = read_block()?;
        let colors = if has_color { Some(read_block()?) } else { None };
        PointCloud::new(points, colors)
    }
}

/// Pinhole camera with a camera-to-world extrinsic. The camera looks along
/// its +z axis, x to the right of the image and y down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub extrinsics: Pose,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, extrinsics: Pose) -> Result<Self> {
        let cam = CameraModel { fx, fy, cx, cy, width, height, extrinsics };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::domain("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::domain("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// World point seen at pixel `(u, v)` with depth `depth` along the optical axis.
    pub fn deproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::domain(format!("depth must be positive, got {depth}")));
        }
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return Err(Error::domain(format!("pixel ({u}, {v}) outside the image")));
        }
        let p = Vector3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth);
        Ok(self.extrinsics.transform_point(&p))
    }

    /// Inverse of [`deproject`](Self::deproject): `(u, v, depth)`. Points
    /// behind the camera are an error; points outside the image are not.
    pub fn project(&self, world: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let p = self.extrinsics.inverse().transform_point(world);
        if !(p.z > 0.0) {
            return Err(Error::domain("point is not in front of the camera"));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }

    /// Deprojects a row-major depth image (meters). Pixels with nonpositive
    /// or non-finite depth are skipped. `rgb`, if given, must match the
    /// image size.
    pub fn deproject_image(&self, depth: &[f64], rgb: Option<&[[f64; 3]]>) -> Result<PointCloud> {
        let n = self.width as usize * self.height as usize;
        if depth.len() != n || rgb.is_some_and(|c| c.len() != n) {
            return Err(Error::domain(format!("image buffers must hold {n} pixels")));
        }
        let mut points = Vec::new();
        let mut colors = rgb.map(|_| Vec::new());
        for (i, &z) in depth.iter().enumerate() {
            if !(z > 0.0 && z.is_finite()) {
                continue;
            }
            let (u, v) = ((i % self.width as usize) as f64, (i / self.width as usize) as f64);
            points.push(self.deproject(u, v, z)?);
            if let (Some(cs), Some(rgb)) = (colors.as_mut(), rgb) {
                cs.push(Vector3::from(rgb[i]));
            }
        }
        PointCloud::new(points, colors)
    }
}

/// Absolute end-effector target predicted by a keypose policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyposeAction {
    pub pose: Pose,
    pub gripper: f64,
    pub next_mode: Mode,
}

impl KeyposeAction {
    pub fn new(pose: Pose, gripper: f64, next_mode: Mode) -> Result<Self> {
        check_gripper(gripper)?;
        Ok(KeyposeAction { pose, gripper, next_mode })
    }
}

pub(crate) fn check_gripper(g: f64) -> Result<()> {
    if (0.0..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(Error::domain(format!("gripper command {g} outside [0, 1]")))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Positional keypose from per-point saliency and offsets: the offset of the
/// most salient point is applied to that point.
pub fn decode_keypose(
    cloud: &PointCloud,
    saliency: &[f64],
    offsets: &[Vector3<f64>],
    rotation: Rotation,
    gripper: f64,
    next_mode: Mode,
) -> Result<KeyposeAction> {
    if cloud.is_empty() {
        return Err(Error::domain("cannot decode a keypose from an empty cloud"));
    }
    if saliency.len() != cloud.len() || offsets.len() != cloud.len() {
        return Err(Error::domain(format!(
            "cloud has {} points but saliency has {} and offsets {}",
            cloud.len(),
            saliency.len(),
            offsets.len()
        )));
    }
    if saliency.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::domain("saliency must be finite and non-negative"));
    }
    let total: f64 = saliency.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("saliency sums to {total}, expected 1")));
    }
    let i = argmax(saliency).expect("non-empty");
    let position = cloud.points[i] + offsets[i];
    KeyposeAction::new(Pose::new(position, rotation), gripper, next_mode)
}

/// Saliency proportional to `1 / (‖p − keypoint‖ + δ)`, normalized to sum to one.
pub fn conditioned_saliency(cloud: &PointCloud, keypoint: &Vector3<f64>) -> Vec<f64> {
    let w: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| 1.0 / ((p - keypoint).norm() + SALIENCY_DELTA))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Aabb { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] <= self.max[k]) {
                return Err(Error::domain(format!("box axis {k} has min > max or is not finite")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - margin && p[k] <= self.max[k] + margin)
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|k, _| {
            if self.min[k] == self.max[k] {
                self.min[k]
            } else {
                rng.random_range(self.min[k]..self.max[k])
            }
        })
    }
}

/// Appends `n_clusters` Gaussian clusters with centers uniform in `bounds`.
/// Original points come first and are untouched. Colored clouds get one
/// random color per cluster.
pub fn add_distractors(
    cloud: &PointCloud,
    n_clusters: usize,
    points_per_cluster: usize,
    bounds: &Aabb,
    seed: u64,
) -> Result<PointCloud> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, DISTRACTOR_SIGMA).expect("valid sigma");
    let limit = DISTRACTOR_TRUNCATION * DISTRACTOR_SIGMA;
    let mut points = cloud.points.clone();
    let mut colors = cloud.colors.clone();
    for _ in 0..n_clusters {
        let center = bounds.sample(&mut rng);
        let color = Vector3::from_fn(|_, _| rng.random::<f64>());
        for _ in 0..points_per_cluster {
            let offset = Vector3::from_fn(|_, _| loop {
                let x: f64 = normal.sample(&mut rng);
                if x.abs() <= limit {
                    break x;
                }
            });
            points.push(center + offset);
            if let Some(c) = colors.as_mut() {
                c.push(color);
            }
        }
    }
    PointCloud::new(points, colors)
}
