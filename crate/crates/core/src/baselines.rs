//! Point-cloud row detectors used as comparison methods: twin RANSAC lines
//! after ground projection, and a parallel line pair with an optional
//! density-based offset refinement.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{preprocess, Box3, GroundEstimate, Point3, PointCloud, Preprocessed, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub pre: PreprocessConfig,
    /// Applied in the leveled frame with z measured from the ground plane.
    pub prefilter: Box3,
    /// Points closer than this to the ground plane count as ground, meters.
    pub ground_clearance: f64,
    pub line_iters: usize,
    /// Line inlier distance, meters.
    pub line_tol: f64,
    pub pair_hypotheses: usize,
    /// Width of the offset-refinement histogram bins, meters.
    pub density_bin: f64,
    /// Half-width of the refinement search around each fitted line, meters.
    pub refine_window: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            pre: PreprocessConfig::default(),
            prefilter: Box3 {
                min: [0.0, -5.0, 0.0],
                max: [20.0, 5.0, 2.5],
            },
            ground_clearance: 0.15,
            line_iters: 200,
            line_tol: 0.1,
            pair_hypotheses: 500,
            density_bin: 0.05,
            refine_window: 1.0,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        self.prefilter.validate()?;
        for (v, name) in [
            (self.line_tol, "line_tol"),
            (self.density_bin, "density_bin"),
            (self.refine_window, "refine_window"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.ground_clearance >= 0.0) {
            return Err(invalid("ground_clearance must be non-negative"));
        }
        if self.line_iters == 0 || self.pair_hypotheses == 0 {
            return Err(invalid("iteration counts must be positive"));
        }
        Ok(())
    }
}

/// Infinite line in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub point: Vector2<f64>,
    /// Unit length, oriented toward +x.
    pub direction: Vector2<f64>,
}

impl Line2 {
    pub fn new(point: Vector2<f64>, direction: Vector2<f64>) -> Option<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return None;
        }
        Some(Self {
            point,
            direction: forward(direction / n),
        })
    }

    /// Left-hand normal of the direction.
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.direction.y, self.direction.x)
    }

    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        self.normal().dot(&(p - self.point))
    }

    /// Closest point to the origin.
    pub fn foot(&self) -> Vector2<f64> {
        self.point - self.direction * self.direction.dot(&self.point)
    }
}

fn forward(d: Vector2<f64>) -> Vector2<f64> {
    if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) {
        -d
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowLinePair {
    /// Line on the +y side of the sensor.
    pub left: Line2,
    pub right: Line2,
    pub parallel: bool,
}

impl RowLinePair {
    pub fn centerline(&self) -> Line2 {
        midline(&self.left, &self.right)
    }
}

/// Lateral offset and heading of the sensor relative to a row centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowEstimate {
    pub y: f64,
    pub theta: f64,
}

/// Pose implied by a centerline seen in the vehicle frame.
pub fn pose_from_centerline(center: &Line2) -> RowEstimate {
    RowEstimate {
        y: -center.normal().dot(&center.point),
        theta: -center.direction.y.atan2(center.direction.x),
    }
}

fn midline(a: &Line2, b: &Line2) -> Line2 {
    let d = a.direction + b.direction;
    let direction = if d.norm() > 1e-12 { d.normalize() } else { a.direction };
    Line2 {
        point: (a.foot() + b.foot()) / 2.0,
        direction: forward(direction),
    }
}

/// Non-ground points projected onto the ground plane and split by side.
#[derive(Debug, Clone)]
pub struct ProjectedScan {
    pub left: Vec<Vector2<f64>>,
    pub right: Vec<Vector2<f64>>,
    pub ground: GroundEstimate,
}

pub fn project_scan(cloud_c: &PointCloud, params: &BaselineParams) -> Result<ProjectedScan> {
    params.validate()?;
    Ok(project_preprocessed(&preprocess(cloud_c, &params.pre)?, params))
}

pub fn project_preprocessed(pre: &Preprocessed, params: &BaselineParams) -> ProjectedScan {
    let level = pre.ground.leveling();
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for p in &pre.cloud.points {
        let q = level * p.coords;
        let z = q.z + pre.ground.height;
        if z < params.ground_clearance || !params.prefilter.contains(&Point3::new(q.x, q.y, z)) {
            continue;
        }
        let v = Vector2::new(q.x, q.y);
        if q.y >= 0.0 {
            left.push(v);
        } else {
            right.push(v);
        }
    }
    ProjectedScan {
        left,
        right,
        ground: pre.ground,
    }
}

fn scatter(points: &[&Vector2<f64>]) -> (Vector2<f64>, Matrix2<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + *p) / n;
    let s = points.iter().fold(Matrix2::zeros(), |a, p| {
        let d = *p - mean;
        a + d * d.transpose()
    });
    (mean, s)
}

fn principal(s: &Matrix2<f64>) -> Vector2<f64> {
    let e = SymmetricEigen::new(*s);
    let i = if e.eigenvalues[0] >= e.eigenvalues[1] { 0 } else { 1 };
    e.eigenvectors.column(i).into()
}

fn two_distinct(rng: &mut crate::rng::Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// RANSAC line with a least-squares refit over the inliers.
pub fn ransac_line(points: &[Vector2<f64>], iters: usize, tol: f64, seed: u64, side: &str) -> Result<Line2> {
    if points.len() < 2 {
        return Err(Error::SideMissing(format!("{side}: {} points", points.len())));
    }
    let mut rng = crate::rng::rng(seed);
    let mut best: Option<(usize, Line2)> = None;
    for _ in 0..iters {
        let (a, b) = two_distinct(&mut rng, points.len());
        let Some(line) = Line2::new(points[a], points[b] - points[a]) else { continue };
        let count = points.iter().filter(|p| line.signed_distance(p).abs() <= tol).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, line));
        }
    }
    let Some((_, hyp)) = best else {
        return Err(Error::SideMissing(format!("{side}: all points coincide")));
    };
    let inliers: Vec<&Vector2<f64>> = points.iter().filter(|p| hyp.signed_distance(p).abs() <= tol).collect();
    if inliers.len() < 2 {
        return Err(Error::SideMissing(format!("{side}: {} inliers", inliers.len())));
    }
    let (mean, s) = scatter(&inliers);
    Ok(Line2::new(mean, principal(&s)).unwrap_or(hyp))
}

/// One RANSAC line per side; the centerline averages the two.
pub fn baseline1(cloud_c: &PointCloud, params: &BaselineParams, seed: u64) -> Result<RowEstimate> {
    baseline1_projected(&project_scan(cloud_c, params)?, params, seed)
}

pub fn baseline1_projected(scan: &ProjectedScan, params: &BaselineParams, seed: u64) -> Result<RowEstimate> {
    let left = ransac_line(&scan.left, params.line_iters, params.line_tol, crate::rng::derive(seed, "left"), "left")?;
    let right = ransac_line(&scan.right, params.line_iters, params.line_tol, crate::rng::derive(seed, "right"), "right")?;
    Ok(pose_from_centerline(&midline(&left, &right)))
}

fn pair_cost(scan: &ProjectedScan, pair: &RowLinePair, tol: f64) -> f64 {
    let t2 = tol * tol;
    let term = |line: &Line2, p: &Vector2<f64>| line.signed_distance(p).powi(2).min(t2);
    let sum: f64 = scan.left.iter().map(|p| term(&pair.left, p)).sum::<f64>()
        + scan.right.iter().map(|p| term(&pair.right, p)).sum::<f64>();
    sum / (scan.left.len() + scan.right.len()) as f64
}

fn parallel_pair(left: Vector2<f64>, right: Vector2<f64>, direction: Vector2<f64>) -> RowLinePair {
    let direction = forward(direction.normalize());
    RowLinePair {
        left: Line2 { point: left, direction },
        right: Line2 { point: right, direction },
        parallel: true,
    }
}

/// Parallel line pair minimizing the truncated mean squared distance over
/// both sides, refit on the pooled inliers.
pub fn baseline2(cloud_c: &PointCloud, params: &BaselineParams, seed: u64) -> Result<(RowEstimate, RowLinePair)> {
    baseline2_projected(&project_scan(cloud_c, params)?, params, seed)
}

pub fn baseline2_projected(
    scan: &ProjectedScan,
    params: &BaselineParams,
    seed: u64,
) -> Result<(RowEstimate, RowLinePair)> {
    for (side, pts) in [("left", &scan.left), ("right", &scan.right)] {
        if pts.len() < 2 {
            return Err(Error::SideMissing(format!("{side}: {} points", pts.len())));
        }
    }
    let mut rng = crate::rng::rng(seed);
    let mut best: Option<(f64, RowLinePair)> = None;
    for it in 0..params.pair_hypotheses {
        // Alternate which side supplies the direction.
        let (dir_side, off_side) = if it % 2 == 0 { (&scan.left, &scan.right) } else { (&scan.right, &scan.left) };
        let (a, b) = two_distinct(&mut rng, dir_side.len());
        let d = dir_side[b] - dir_side[a];
        if !(d.norm() > 0.0) {
            continue;
        }
        let o = off_side[rng.random_range(0..off_side.len())];
        let pair = if it % 2 == 0 {
            parallel_pair(dir_side[a], o, d)
        } else {
            parallel_pair(o, dir_side[a], d)
        };
        let cost = pair_cost(scan, &pair, params.line_tol);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, pair));
        }
    }
    let Some((_, hyp)) = best else {
        return Err(Error::SideMissing("no side has two distinct points".into()));
    };
    let tol = params.line_tol;
    let li: Vec<&Vector2<f64>> = scan.left.iter().filter(|p| hyp.left.signed_distance(p).abs() <= tol).collect();
    let ri: Vec<&Vector2<f64>> = scan.right.iter().filter(|p| hyp.right.signed_distance(p).abs() <= tol).collect();
    let pair = if li.len() >= 2 && ri.len() >= 2 {
        let (ml, sl) = scatter(&li);
        let (mr, sr) = scatter(&ri);
        parallel_pair(ml, mr, principal(&(sl + sr)))
    } else {
        hyp
    };
    Ok((pose_from_centerline(&pair.centerline()), pair))
}

/// Snap one line to the densest bin of signed point distances near it. Bins
/// are centered on multiples of `bin`; ties go to the bin nearest the line.
fn snap_to_density(line: &Line2, points: &[Vector2<f64>], bin: f64, window: f64, side: &str) -> Result<Line2> {
    let k_max = (window / bin).ceil() as i64;
    let mut counts = vec![0usize; (2 * k_max + 1) as usize];
    for p in points {
        let s = line.signed_distance(p);
        if s.abs() <= window {
            let k = (s / bin).round() as i64;
            if k.abs() <= k_max {
                counts[(k + k_max) as usize] += 1;
            }
        }
    }
    let mut best: Option<(usize, i64)> = None;
    for (i, &c) in counts.iter().enumerate() {
        let k = i as i64 - k_max;
        if c == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bc, bk)) => c > bc || (c == bc && k.abs() < bk.abs()),
        };
        if better {
            best = Some((c, k));
        }
    }
    let Some((_, k)) = best else {
        return Err(Error::EmptyInput(format!("{side}: no points within {window} m of the line")));
    };
    Ok(Line2 {
        point: line.point + line.normal() * (k as f64 * bin),
        direction: line.direction,
    })
}

/// Re-estimate the lateral offset from the point density around each line;
/// the heading is left as fitted.
pub fn baseline2_refine_offset(scan: &ProjectedScan, pair: &RowLinePair, params: &BaselineParams) -> Result<f64> {
    let left = snap_to_density(&pair.left, &scan.left, params.density_bin, params.refine_window, "left")?;
    let right = snap_to_density(&pair.right, &scan.right, params.density_bin, params.refine_window, "right")?;
    let center = Line2 {
        point: (left.foot() + right.foot()) / 2.0,
        direction: pair.centerline().direction,
    };
    Ok(pose_from_centerline(&center).y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Pose6D};
    use crate::synth::{generate_scene, render_frame, OrchardSpec, SensorSpec};
    use proptest::prelude::*;

    fn wall_frame(y: f64, theta: f64, seed: u64) -> PointCloud {
        // Foliage returns lie exactly on the canopy faces.
        let spec = OrchardSpec {
            surface_depth: 0.0,
            ..OrchardSpec::vineyard()
        };
        let scene = generate_scene(&spec, seed).unwrap();
        let pose = Pose6D::new(30.0, y, 1.0, 0.0, 0.0, theta);
        render_frame(&scene, &pose, &SensorSpec::noiseless(), seed + 1).cloud
    }

    #[test]
    fn centerline_pose_convention() {
        // Sensor at y = 0.2, heading 0.1: the centerline seen from the sensor.
        let (y, th) = (0.2f64, 0.1f64);
        let d = Vector2::new(th.cos(), -th.sin());
        let p = Vector2::new(0.0, -y / th.cos());
        let e = pose_from_centerline(&Line2::new(p, d).unwrap());
        assert!((e.y - y).abs() < 1e-12 && (e.theta - th).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn noiseless_wall_scene_recovery() {
        let params = BaselineParams::default();
        for (y, th) in [(0.2, 0.1), (-0.15, -0.05), (0.0, 0.0)] {
            let c = wall_frame(y, th, 11);
            let b1 = baseline1(&c, &params, 3).unwrap();
            assert!((b1.y - y).abs() < 0.01 && (b1.theta - th).abs() < 0.005, "b1 {b1:?} vs ({y}, {th})");
            let (b2, pair) = baseline2(&c, &params, 3).unwrap();
            assert!(pair.parallel);
            assert!((b2.y - y).abs() < 0.01 && (b2.theta - th).abs() < 0.005, "b2 {b2:?} vs ({y}, {th})");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = wall_frame(0.1, 0.05, 5);
        let p = BaselineParams::default();
        assert_eq!(baseline1(&c, &p, 9).unwrap(), baseline1(&c, &p, 9).unwrap());
        assert_eq!(baseline2(&c, &p, 9).unwrap(), baseline2(&c, &p, 9).unwrap());
    }

    fn ground_grid() -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..40 {
                pts.push(Point3::new(1.0 + i as f64 * 0.3, -5.0 + j as f64 * 0.25, -1.0));
            }
        }
        pts
    }

    #[test]
    fn missing_side_is_reported() {
        let mut pts = ground_grid();
        pts.extend((0..50).map(|i| Point3::new(2.0 + i as f64 * 0.2, 1.5, 0.0)));
        let c = PointCloud::new(pts, Frame::Camera);
        let p = BaselineParams::default();
        assert!(matches!(baseline1(&c, &p, 1), Err(Error::SideMissing(_))));
        assert!(matches!(baseline2(&c, &p, 1), Err(Error::SideMissing(_))));
    }

    fn scan_of(left: Vec<Vector2<f64>>, right: Vec<Vector2<f64>>) -> ProjectedScan {
        ProjectedScan {
            left,
            right,
            ground: GroundEstimate {
                plane: crate::geometry::Plane::new(nalgebra::Vector3::z(), -1.0).unwrap(),
                roll: 0.0,
                pitch: 0.0,
                height: 1.0,
                inlier_ratio: 1.0,
            },
        }
    }

    #[test]
    fn refinement_is_noop_on_exact_lines() {
        let line_pts = |y: f64| (0..100).map(|i| Vector2::new(i as f64 * 0.2, y)).collect::<Vec<_>>();
        let scan = scan_of(line_pts(1.3), line_pts(-1.7));
        let params = BaselineParams::default();
        let (est, pair) = baseline2_projected(&scan, &params, 2).unwrap();
        let refined = baseline2_refine_offset(&scan, &pair, &params).unwrap();
        assert!((est.y - 0.2).abs() < 1e-9);
        assert!((refined - est.y).abs() <= params.density_bin);
    }

    #[test]
    fn refinement_prefers_dense_trunk_plane() {
        // Dense trunk planes at ±1.5; diffuse foliage 0.2 m outward on the left only.
        let mut rng = crate::rng::rng(4);
        let mut left: Vec<Vector2<f64>> = (0..200).map(|i| Vector2::new(i as f64 * 0.1, 1.5)).collect();
        left.extend((0..400).map(|_| Vector2::new(rng.random_range(0.0..20.0), 1.7 + rng.random_range(-0.08..0.08))));
        let right: Vec<Vector2<f64>> = (0..200).map(|i| Vector2::new(i as f64 * 0.1, -1.5)).collect();
        let scan = scan_of(left, right);
        let params = BaselineParams {
            line_tol: 0.3,
            ..BaselineParams::default()
        };
        let (est, pair) = baseline2_projected(&scan, &params, 6).unwrap();
        let refined = baseline2_refine_offset(&scan, &pair, &params).unwrap();
        assert!(refined.abs() < est.y.abs(), "refined {refined} vs unrefined {}", est.y);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        let line_pts = |y: f64| (0..20).map(|i| Vector2::new(i as f64, y)).collect::<Vec<_>>();
        let scan = scan_of(line_pts(1.5), line_pts(-1.5));
        let far = Line2::new(Vector2::new(0.0, 4.0), Vector2::x()).unwrap();
        let pair = RowLinePair {
            left: far,
            right: Line2::new(Vector2::new(0.0, -1.5), Vector2::x()).unwrap(),
            parallel: true,
        };
        assert!(matches!(
            baseline2_refine_offset(&scan, &pair, &BaselineParams::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    proptest! {
        #[test]
        fn pair_is_always_parallel(
            left in prop::collection::vec((0.0..20.0f64, 0.0..5.0f64), 2..40),
            right in prop::collection::vec((0.0..20.0f64, -5.0..0.0f64), 2..40),
            seed in 0u64..1000,
        ) {
            let scan = scan_of(
                left.iter().map(|&(x, y)| Vector2::new(x, y)).collect(),
                right.iter().map(|&(x, y)| Vector2::new(x, y)).collect(),
            );
            if let Ok((_, pair)) = baseline2_projected(&scan, &BaselineParams::default(), seed) {
                prop_assert!(pair.parallel);
                prop_assert!((pair.left.direction - pair.right.direction).norm() <= 1e-9);
                prop_assert!((pair.left.direction.norm() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
