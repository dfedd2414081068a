use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rot_x, rot_y, transform_cloud, voxel_downsample, Frame, Plane, Point3, PointCloud, RigidTransform};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iters: usize,
    /// Inlier band half-width, meters.
    pub inlier_tol: f64,
    /// Minimum fraction of points on the winning plane.
    pub min_inlier_ratio: f64,
    /// Largest accepted angle between a hypothesis normal and the sensor z
    /// axis, radians. Keeps canopy faces from winning over sparse ground.
    pub max_tilt: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            inlier_tol: 0.05,
            min_inlier_ratio: 0.05,
            max_tilt: 0.5,
        }
    }
}

/// Ground plane in the vehicle frame and the attitude it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundEstimate {
    /// Normal points toward +z of the sensor.
    pub plane: Plane,
    pub roll: f64,
    pub pitch: f64,
    /// Sensor height above the plane, meters.
    pub height: f64,
    pub inlier_ratio: f64,
}

impl GroundEstimate {
    /// `Ry(pitch) · Rx(roll)`: maps vehicle vectors into a level frame.
    pub fn leveling(&self) -> Matrix3<f64> {
        rot_y(self.pitch) * rot_x(self.roll)
    }

    fn from_plane(plane: Plane, inlier_ratio: f64) -> Self {
        let n = plane.normal;
        Self {
            plane,
            roll: n.y.atan2(n.z),
            pitch: (-n.x).atan2((n.y * n.y + n.z * n.z).sqrt()),
            height: -plane.offset,
            inlier_ratio,
        }
    }
}

fn covariance(points: &[&Point3]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    }) / n;
    (mean, cov)
}

/// Plane through the centroid along the least-variance direction.
fn fit_plane(points: &[&Point3]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let (mean, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal: Vector3<f64> = eig.eigenvectors.column(imin).into();
    Plane::new(normal, normal.dot(&mean) / normal.norm())
}

fn oriented_up(plane: Plane) -> Plane {
    if plane.normal.z < 0.0 {
        Plane {
            normal: -plane.normal,
            offset: -plane.offset,
        }
    } else {
        plane
    }
}

fn is_collinear(points: &[Point3]) -> bool {
    let refs: Vec<&Point3> = points.iter().collect();
    let (_, cov) = covariance(&refs);
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1] <= 1e-12 * ev[2].max(1e-300)
}

/// Best 3-point plane hypothesis (most inliers, first found on ties), refit by
/// least squares over its inliers.
pub fn ransac_ground_plane(cloud: &PointCloud, cfg: &RansacConfig, seed: u64) -> Result<GroundEstimate> {
    let pts = &cloud.points;
    if cfg.iters == 0 {
        return Err(invalid("RANSAC needs at least one iteration"));
    }
    if !(cfg.inlier_tol > 0.0) {
        return Err(invalid(format!("inlier tolerance must be positive, got {}", cfg.inlier_tol)));
    }
    if !(cfg.max_tilt > 0.0) {
        return Err(invalid(format!("max tilt must be positive, got {}", cfg.max_tilt)));
    }
    let min_cos = cfg.max_tilt.min(std::f64::consts::FRAC_PI_2).cos();
    if pts.len() < 3 {
        return Err(Error::DegenerateInput(format!("{} points, need at least 3", pts.len())));
    }
    if is_collinear(pts) {
        return Err(Error::DegenerateInput("all points collinear".into()));
    }

    let mut rng = crate::rng::rng(seed);
    let n = pts.len();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..cfg.iters {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.random_range(0..n - 2);
        for k in [a.min(b), a.max(b)] {
            if c >= k {
                c += 1;
            }
        }
        let normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let Some(plane) = Plane::new(normal, 0.0) else { continue };
        if plane.normal.z.abs() < min_cos {
            continue;
        }
        let plane = Plane {
            offset: plane.normal.dot(&pts[a].coords),
            ..plane
        };
        let count = pts
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= cfg.inlier_tol)
            .count();
        if best.is_none_or(|(c0, _)| count > c0) {
            best = Some((count, plane));
        }
    }
    let Some((_, hypothesis)) = best else {
        return Err(Error::DegenerateInput("no non-degenerate, near-level plane hypothesis sampled".into()));
    };

    let inliers: Vec<&Point3> = pts
        .iter()
        .filter(|p| hypothesis.signed_distance(p).abs() <= cfg.inlier_tol)
        .collect();
    let refit = fit_plane(&inliers).unwrap_or(hypothesis);
    let plane = oriented_up(refit);
    let count = pts
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= cfg.inlier_tol)
        .count();
    let ratio = count as f64 / n as f64;
    if ratio < cfg.min_inlier_ratio {
        return Err(Error::LowConfidence {
            ratio,
            floor: cfg.min_inlier_ratio,
        });
    }
    Ok(GroundEstimate::from_plane(plane, ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Downsampling leaf, meters.
    pub leaf: f64,
    pub ransac: RansacConfig,
    /// Camera-to-vehicle extrinsic, stored as rotation rows then translation.
    #[serde(skip)]
    pub extrinsic: RigidTransform,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            leaf: 0.1,
            ransac: RansacConfig::default(),
            extrinsic: RigidTransform::identity(),
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Downsampled cloud in `{V}`.
    pub cloud: PointCloud,
    pub ground: GroundEstimate,
}

/// Downsample, move `{C}` → `{V}`, and estimate the ground plane.
pub fn preprocess(cloud_c: &PointCloud, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let down = voxel_downsample(cloud_c, cfg.leaf)?;
    let cloud = transform_cloud(&cfg.extrinsic, &down).with_frame(Frame::Vehicle);
    let ground = ransac_ground_plane(&cloud, &cfg.ransac, cfg.seed)?;
    Ok(Preprocessed { cloud, ground })
}
