//! Synthetic orchard rows, a simulated forward-looking 3D sensor, sinusoidal
//! ground-truth paths, simulated odometry and the degradation operators used by
//! the robustness studies.
//!
//! Row frame `{R}`: x along the centerline from the row start, y to the left,
//! z up from the ground. The left canopy of the row sits at `y = +spacing/2`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{io::write_cloud, normalize_angle, Frame, Point3, PointCloud, Pose6D};
use crate::mcl::{GaussianNoise, OdometryDelta};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CanopyProfile {
    /// Trellised hedge: a slab of `thickness` from `base` to `height`, seen
    /// from the face toward the traversed row.
    Wall { height: f64, thickness: f64, base: f64 },
    /// One ellipsoid per plant centered at `center_height`, with per-tree
    /// jitter of position (meters) and radii (fraction).
    Blob {
        rx: f64,
        ry: f64,
        rz: f64,
        center_height: f64,
        position_jitter: f64,
        size_jitter: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchardSpec {
    pub row_spacing: f64,
    pub plant_spacing: f64,
    /// Drivable length; the trajectory covers `[0, row_length]`.
    pub row_length: f64,
    /// Extra canopy beyond the row length so the last frames still see a full row.
    pub tail_padding: f64,
    pub canopy: CanopyProfile,
    /// Points per m² of visible canopy face: wall side area, or the half of
    /// each blob's surface that faces the traversed row.
    pub foliage_density: f64,
    /// Mean depth of returns behind the canopy face (exponential, meters).
    pub surface_depth: f64,
    /// Density multiplier for tree lines beyond the traversed row, standing in
    /// for occlusion by the row's own canopy.
    pub neighbor_visibility: f64,
    /// Points per meter of trunk.
    pub trunk_density: f64,
    pub trunk_radius: f64,
    /// Points per m² of ground.
    pub ground_density: f64,
    pub ground_roughness: f64,
    /// Tree rows modeled beyond each side of the traversed row.
    pub neighbor_rows: usize,
    /// Missing plants of the traversed row, by side and plant index.
    pub gaps: Vec<(Side, usize)>,
    /// `None` for a straight row.
    pub curvature_radius: Option<f64>,
}

impl OrchardSpec {
    /// Trellised vineyard: 3 m rows, 2.2 m canopy, vines every 1.8 m, 90 m rows.
    pub fn vineyard() -> Self {
        Self {
            row_spacing: 3.0,
            plant_spacing: 1.8,
            row_length: 90.0,
            tail_padding: 21.0,
            canopy: CanopyProfile::Wall {
                height: 2.2,
                thickness: 0.5,
                base: 0.6,
            },
            foliage_density: 50.0,
            surface_depth: 0.08,
            neighbor_visibility: 0.3,
            trunk_density: 20.0,
            trunk_radius: 0.05,
            ground_density: 15.0,
            ground_roughness: 0.02,
            neighbor_rows: 1,
            gaps: Vec::new(),
            curvature_radius: None,
        }
    }

    /// Apricot-like orchard: 5 m rows, trees every 2.5 m, 50 m rows, large
    /// irregular ellipsoidal canopies.
    pub fn apricot() -> Self {
        Self {
            row_spacing: 5.0,
            plant_spacing: 2.5,
            row_length: 50.0,
            tail_padding: 21.0,
            canopy: CanopyProfile::Blob {
                rx: 1.3,
                ry: 1.3,
                rz: 1.2,
                center_height: 2.2,
                position_jitter: 0.25,
                size_jitter: 0.2,
            },
            foliage_density: 40.0,
            surface_depth: 0.15,
            neighbor_visibility: 0.3,
            trunk_density: 20.0,
            trunk_radius: 0.08,
            ground_density: 15.0,
            ground_roughness: 0.02,
            neighbor_rows: 1,
            gaps: Vec::new(),
            curvature_radius: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vineyard" | "wall" => Ok(Self::vineyard()),
            "apricot" | "blob" => Ok(Self::apricot()),
            _ => Err(invalid(format!("unknown scene preset '{name}'"))),
        }
    }

    pub fn scene_length(&self) -> f64 {
        self.row_length + self.tail_padding
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {v}")))
            }
        };
        pos(self.row_spacing, "row_spacing")?;
        pos(self.plant_spacing, "plant_spacing")?;
        pos(self.row_length, "row_length")?;
        for (v, what) in [
            (self.foliage_density, "foliage_density"),
            (self.surface_depth, "surface_depth"),
            (self.neighbor_visibility, "neighbor_visibility"),
            (self.trunk_density, "trunk_density"),
            (self.ground_density, "ground_density"),
            (self.tail_padding, "tail_padding"),
            (self.ground_roughness, "ground_roughness"),
            (self.trunk_radius, "trunk_radius"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{what} must be nonnegative, got {v}")));
            }
        }
        match self.canopy {
            CanopyProfile::Wall { height, thickness, base } => {
                pos(thickness, "wall thickness")?;
                if !(base >= 0.0 && height > base) {
                    return Err(invalid("wall needs 0 ≤ base < height"));
                }
            }
            CanopyProfile::Blob {
                rx,
                ry,
                rz,
                center_height,
                position_jitter,
                size_jitter,
            } => {
                pos(rx, "rx")?;
                pos(ry, "ry")?;
                pos(rz, "rz")?;
                pos(center_height, "center_height")?;
                if !(position_jitter >= 0.0 && (0.0..1.0).contains(&size_jitter)) {
                    return Err(invalid("blob jitter out of range"));
                }
            }
        }
        if let Some(r) = self.curvature_radius {
            check_radius(r, self.scene_length())?;
        }
        Ok(())
    }

    /// Apply `scene.*` keys of a config file.
    pub fn apply_config(&mut self, kv: &KvConfig) -> Result<()> {
        kv.apply("scene.row_spacing", &mut self.row_spacing)?;
        kv.apply("scene.plant_spacing", &mut self.plant_spacing)?;
        kv.apply("scene.row_length", &mut self.row_length)?;
        kv.apply("scene.tail_padding", &mut self.tail_padding)?;
        kv.apply("scene.foliage_density", &mut self.foliage_density)?;
        kv.apply("scene.surface_depth", &mut self.surface_depth)?;
        kv.apply("scene.neighbor_visibility", &mut self.neighbor_visibility)?;
        kv.apply("scene.trunk_density", &mut self.trunk_density)?;
        kv.apply("scene.ground_density", &mut self.ground_density)?;
        kv.apply("scene.ground_roughness", &mut self.ground_roughness)?;
        kv.apply("scene.neighbor_rows", &mut self.neighbor_rows)?;
        if let Some(r) = kv.get::<f64>("scene.curvature_radius")? {
            self.curvature_radius = (r.is_finite() && r > 0.0).then_some(r);
        }
        match &mut self.canopy {
            CanopyProfile::Wall { height, thickness, base } => {
                kv.apply("scene.wall_height", height)?;
                kv.apply("scene.wall_thickness", thickness)?;
                kv.apply("scene.wall_base", base)?;
            }
            CanopyProfile::Blob { rx, ry, rz, center_height, .. } => {
                kv.apply("scene.blob_rx", rx)?;
                kv.apply("scene.blob_ry", ry)?;
                kv.apply("scene.blob_rz", rz)?;
                kv.apply("scene.blob_center_height", center_height)?;
            }
        }
        if let Some(list) = kv.get_list::<String>("scene.gaps")? {
            self.gaps = list.iter().map(|g| parse_gap(g)).collect::<Result<_>>()?;
        }
        self.validate()
    }
}

/// `L12` / `R3`: side letter followed by plant index.
fn parse_gap(s: &str) -> Result<(Side, usize)> {
    let side = match s.chars().next() {
        Some('L' | 'l') => Side::Left,
        Some('R' | 'r') => Side::Right,
        _ => return Err(Error::Parse(format!("gap '{s}' must start with L or R"))),
    };
    let idx = s[1..].parse().map_err(|e| Error::Parse(format!("gap '{s}': {e}")))?;
    Ok((side, idx))
}

fn check_radius(r: f64, length: f64) -> Result<()> {
    if !(r > length / std::f64::consts::PI) {
        return Err(invalid(format!("curvature radius {r} m must exceed row length / π = {:.2} m", length / std::f64::consts::PI)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    Ground,
    Canopy(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTag {
    pub class: PointClass,
    /// Plant index along the row (0 for ground).
    pub plant: u32,
    /// Along-row station in the straight row, meters.
    pub station: f64,
    /// 0 for the traversed row, ±k for neighbor tree lines.
    pub row: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchardScene {
    pub spec: OrchardSpec,
    pub points: Vec<Point3>,
    pub tags: Vec<PointTag>,
}

impl OrchardScene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn poisson_count(rng: &mut Rng, mean: f64) -> usize {
    // Expected count plus Bernoulli rounding: deterministic structure, no heavy tails.
    let base = mean.floor();
    base as usize + usize::from(rng.random::<f64>() < mean - base)
}

/// Build the point set of a row with `neighbor_rows` extra tree lines on each
/// side, then bend it if a curvature radius is set.
pub fn generate_scene(spec: &OrchardSpec, seed: u64) -> Result<OrchardScene> {
    spec.validate()?;
    let mut rng = rng::rng(rng::derive(seed, "scene"));
    let mut points = Vec::new();
    let mut tags = Vec::new();
    let len = spec.scene_length();
    let s = spec.row_spacing;
    let n_plants = (len / spec.plant_spacing).floor() as usize + 1;

    let k = spec.neighbor_rows as i32;
    for line in -k..=k + 1 {
        // Tree line at y = (line − 0.5)·s: lines 0 and 1 bound the traversed row.
        let y_line = (line as f64 - 0.5) * s;
        let side = if y_line > 0.0 { Side::Left } else { Side::Right };
        let row = if line == 0 || line == 1 { 0 } else if line > 1 { line - 1 } else { line };
        let toward_row = -side.sign();
        let density = if row == 0 { 1.0 } else { spec.neighbor_visibility };
        let depth = |rng: &mut Rng, max: f64| {
            if spec.surface_depth > 0.0 {
                (-spec.surface_depth * (1.0 - rng.random::<f64>()).ln()).min(max)
            } else {
                0.0
            }
        };
        for plant in 0..n_plants {
            if row == 0 && spec.gaps.contains(&(side, plant)) {
                continue;
            }
            let x0 = plant as f64 * spec.plant_spacing;
            let tag = |station: f64| PointTag {
                class: PointClass::Canopy(side),
                plant: plant as u32,
                station,
                row,
            };
            let (trunk_top, cx, cy) = match spec.canopy {
                CanopyProfile::Wall { height, thickness, base } => {
                    let xa = (x0 - spec.plant_spacing / 2.0).max(0.0);
                    let xb = (x0 + spec.plant_spacing / 2.0).min(len);
                    if xb > xa {
                        let n = poisson_count(&mut rng, density * spec.foliage_density * (xb - xa) * (height - base));
                        let face = y_line + toward_row * thickness / 2.0;
                        for _ in 0..n {
                            let x = rng.random_range(xa..xb);
                            let y = face - toward_row * depth(&mut rng, thickness);
                            let z = rng.random_range(base..height);
                            points.push(Point3::new(x, y, z));
                            tags.push(tag(x));
                        }
                    }
                    (base, x0, y_line)
                }
                CanopyProfile::Blob {
                    rx,
                    ry,
                    rz,
                    center_height,
                    position_jitter,
                    size_jitter,
                } => {
                    let j = |rng: &mut Rng| {
                        if position_jitter > 0.0 {
                            rng.random_range(-position_jitter..position_jitter)
                        } else {
                            0.0
                        }
                    };
                    let sz = |rng: &mut Rng| {
                        if size_jitter > 0.0 {
                            1.0 + rng.random_range(-size_jitter..size_jitter)
                        } else {
                            1.0
                        }
                    };
                    let c = Point3::new(x0 + j(&mut rng), y_line + j(&mut rng), center_height + j(&mut rng));
                    let r = [rx * sz(&mut rng), ry * sz(&mut rng), rz * sz(&mut rng)];
                    let n = poisson_count(&mut rng, density * spec.foliage_density * ellipsoid_area(r) / 2.0);
                    for _ in 0..n {
                        // Direction on the hemisphere facing the row, then inward by the return depth.
                        let mut u: nalgebra::Vector3<f64> = nalgebra::Vector3::from_fn(|_, _| rng.sample(rand_distr::StandardNormal));
                        u /= u.norm().max(1e-12);
                        u.y = toward_row * u.y.abs();
                        let surf = nalgebra::Vector3::new(u.x * r[0], u.y * r[1], u.z * r[2]);
                        let scale = 1.0 - depth(&mut rng, surf.norm()) / surf.norm().max(1e-12);
                        let p = Point3::new(c.x + surf.x * scale, c.y + surf.y * scale, (c.z + surf.z * scale).max(0.0));
                        if p.x < 0.0 || p.x > len {
                            continue;
                        }
                        points.push(p);
                        tags.push(tag(p.x));
                    }
                    ((c.z - r[2]).max(0.0), c.x, c.y)
                }
            };
            if (0.0..=len).contains(&cx) {
                let n = poisson_count(&mut rng, density * spec.trunk_density * trunk_top);
                for _ in 0..n {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let p = Point3::new(
                        cx + spec.trunk_radius * a.cos(),
                        cy + spec.trunk_radius * a.sin(),
                        rng.random_range(0.0..trunk_top),
                    );
                    points.push(p);
                    tags.push(tag(p.x));
                }
            }
        }
    }

    let half_w = (k as f64 + 1.0) * s;
    let area = (len + 2.0) * 2.0 * half_w;
    let n_ground = poisson_count(&mut rng, spec.ground_density * area);
    let rough = Normal::new(0.0, spec.ground_roughness.max(0.0)).unwrap();
    for _ in 0..n_ground {
        let x = rng.random_range(-2.0..len);
        let y = rng.random_range(-half_w..half_w);
        let z = if spec.ground_roughness > 0.0 { rough.sample(&mut rng) } else { 0.0 };
        points.push(Point3::new(x, y, z));
        tags.push(PointTag {
            class: PointClass::Ground,
            plant: 0,
            station: x,
            row: 0,
        });
    }

    if let Some(radius) = spec.curvature_radius {
        for p in points.iter_mut() {
            *p = bend_point(p, radius);
        }
    }
    Ok(OrchardScene {
        spec: spec.clone(),
        points,
        tags,
    })
}

/// Knud Thomsen's approximation of an ellipsoid's surface area.
fn ellipsoid_area(r: [f64; 3]) -> f64 {
    let p = 1.6075;
    let (a, b, c) = (r[0].powf(p), r[1].powf(p), r[2].powf(p));
    4.0 * std::f64::consts::PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
}

/// Straight-row `(x, y)` to a circular arc of radius `R` curving left: station
/// becomes arc length, lateral offset becomes radial offset toward the center
/// `(0, R)`.
pub fn bend_point(p: &Point3, radius: f64) -> Point3 {
    let phi = p.x / radius;
    let r = radius - p.y;
    Point3::new(r * phi.sin(), radius - r * phi.cos(), p.z)
}

pub fn unbend_point(p: &Point3, radius: f64) -> Point3 {
    let phi = p.x.atan2(radius - p.y);
    let r = (p.x * p.x + (radius - p.y).powi(2)).sqrt();
    Point3::new(radius * phi, radius - r, p.z)
}

/// Bend a straight-row cloud; `None` (infinite radius) is the identity.
pub fn bend_row(cloud: &PointCloud, radius: Option<f64>, row_length: f64) -> Result<PointCloud> {
    let Some(r) = radius else {
        return Ok(cloud.clone());
    };
    check_radius(r, row_length)?;
    Ok(PointCloud::new(cloud.points.iter().map(|p| bend_point(p, r)).collect(), cloud.frame))
}

pub fn unbend_row(cloud: &PointCloud, radius: Option<f64>) -> PointCloud {
    match radius {
        None => cloud.clone(),
        Some(r) => PointCloud::new(cloud.points.iter().map(|p| unbend_point(p, r)).collect(), cloud.frame),
    }
}

/// Straight-row pose (station, offset, heading relative to the centerline) to
/// a pose in the bent world.
pub fn bend_pose(pose: &Pose6D, radius: Option<f64>) -> Pose6D {
    match radius {
        None => *pose,
        Some(r) => {
            let p = bend_point(&Point3::new(pose.x, pose.y, pose.z), r);
            Pose6D::new(p.x, p.y, p.z, pose.roll, pose.pitch, pose.yaw + pose.x / r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_range: f64,
    /// σ(d) = min(k·d², cap·d) along the ray.
    pub noise_k: f64,
    pub noise_cap: f64,
    pub noise_enabled: bool,
    /// Fraction of in-view points returned.
    pub detection_probability: f64,
    /// Keep only the nearest point per angular bin (radians) when set. With
    /// the default scene densities this makes returns thin out as 1/d² past
    /// about 5 m, as for a camera.
    pub angular_resolution: Option<f64>,
    /// Mounting height above ground, meters.
    pub height: f64,
    /// Per-frame σ of roll and pitch, radians.
    pub attitude_jitter: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            hfov_deg: 90.0,
            vfov_deg: 60.0,
            max_range: 20.0,
            noise_k: 0.02 / 3.0,
            noise_cap: 0.04,
            noise_enabled: true,
            detection_probability: 0.9,
            angular_resolution: Some(0.03),
            height: 1.0,
            attitude_jitter: 0.01,
        }
    }
}

impl SensorSpec {
    pub fn noiseless() -> Self {
        Self {
            noise_enabled: false,
            detection_probability: 1.0,
            attitude_jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn sigma(&self, d: f64) -> f64 {
        (self.noise_k * d * d).min(self.noise_cap * d)
    }

    pub fn validate(&self) -> Result<()> {
        let fov_ok = |v: f64| v > 0.0 && v < 180.0;
        if !(fov_ok(self.hfov_deg) && fov_ok(self.vfov_deg)) {
            return Err(invalid("sensor fields of view must lie in (0°, 180°)"));
        }
        if !(self.max_range > 0.0) {
            return Err(invalid("sensor max range must be positive"));
        }
        if !(0.0..=1.0).contains(&self.detection_probability) {
            return Err(invalid("detection probability must be in [0, 1]"));
        }
        if self.angular_resolution.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid("angular resolution must be positive"));
        }
        Ok(())
    }

    /// Pre-noise visibility predicate in the sensor frame.
    pub fn in_view(&self, p: &Point3) -> bool {
        let th = (self.hfov_deg.to_radians() / 2.0).tan();
        let tv = (self.vfov_deg.to_radians() / 2.0).tan();
        p.x > 0.0 && p.y.abs() <= th * p.x && p.z.abs() <= tv * p.x && p.coords.norm() <= self.max_range
    }

    pub fn apply_config(&mut self, kv: &KvConfig) -> Result<()> {
        kv.apply("sensor.hfov_deg", &mut self.hfov_deg)?;
        kv.apply("sensor.vfov_deg", &mut self.vfov_deg)?;
        kv.apply("sensor.max_range", &mut self.max_range)?;
        kv.apply("sensor.noise_k", &mut self.noise_k)?;
        kv.apply("sensor.noise_cap", &mut self.noise_cap)?;
        kv.apply("sensor.noise_enabled", &mut self.noise_enabled)?;
        kv.apply("sensor.detection_probability", &mut self.detection_probability)?;
        kv.apply("sensor.height", &mut self.height)?;
        kv.apply("sensor.attitude_jitter", &mut self.attitude_jitter)?;
        if let Some(r) = kv.get::<f64>("sensor.angular_resolution")? {
            self.angular_resolution = (r > 0.0).then_some(r);
        }
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    /// Measured points in `{C}`.
    pub cloud: PointCloud,
    pub tags: Vec<PointTag>,
}

/// Simulate one measurement from `pose` (given in the scene's world frame).
pub fn render_frame(scene: &OrchardScene, pose: &Pose6D, sensor: &SensorSpec, seed: u64) -> RenderedFrame {
    let mut rng = rng::rng(seed);
    let t = pose.to_transform();
    let rt = t.rotation.transpose();
    let reach = sensor.max_range;
    let mut picked: Vec<(Point3, PointTag)> = Vec::new();
    for (p, tag) in scene.points.iter().zip(&scene.tags) {
        let d = p - pose_origin(pose);
        if d.x.abs() > reach || d.y.abs() > reach {
            continue;
        }
        let q = Point3::from(rt * d);
        if !sensor.in_view(&q) {
            continue;
        }
        picked.push((q, *tag));
    }
    // Random draws happen in scene order so results do not depend on binning.
    let mut out = Vec::with_capacity(picked.len());
    for (q, tag) in picked {
        let keep = rng.random::<f64>() < sensor.detection_probability;
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        if !keep {
            continue;
        }
        let q = if sensor.noise_enabled {
            let d = q.coords.norm();
            Point3::from(q.coords * (1.0 + sensor.sigma(d) * z / d))
        } else {
            q
        };
        // Noisy ranges past the maximum are not reported.
        if q.coords.norm() > sensor.max_range {
            continue;
        }
        out.push((q, tag));
    }
    if let Some(res) = sensor.angular_resolution {
        let mut best: HashMap<(i64, i64), usize> = HashMap::new();
        for (i, (q, _)) in out.iter().enumerate() {
            let key = ((q.y.atan2(q.x) / res).floor() as i64, (q.z.atan2(q.x.hypot(q.y)) / res).floor() as i64);
            best.entry(key)
                .and_modify(|j| {
                    if q.coords.norm() < out[*j].0.coords.norm() {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
        let mut keep: Vec<usize> = best.into_values().collect();
        keep.sort_unstable();
        out = keep.into_iter().map(|i| out[i]).collect();
    }
    let (points, tags) = out.into_iter().unzip();
    RenderedFrame {
        cloud: PointCloud::new(points, Frame::Camera),
        tags,
    }
}

fn pose_origin(pose: &Pose6D) -> Point3 {
    Point3::new(pose.x, pose.y, pose.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub speed: f64,
    pub rate_hz: f64,
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase: f64,
    /// Half the vehicle width, for the amplitude bound.
    pub vehicle_half_width: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            speed: 1.0,
            rate_hz: 15.0,
            amplitude: 0.3,
            wavelength: 20.0,
            phase: 0.0,
            vehicle_half_width: 0.5,
        }
    }
}

impl TrajectorySpec {
    pub fn apply_config(&mut self, kv: &KvConfig) -> Result<()> {
        kv.apply("trajectory.speed", &mut self.speed)?;
        kv.apply("trajectory.rate_hz", &mut self.rate_hz)?;
        kv.apply("trajectory.amplitude", &mut self.amplitude)?;
        kv.apply("trajectory.wavelength", &mut self.wavelength)?;
        kv.apply("trajectory.phase", &mut self.phase)?;
        kv.apply("trajectory.vehicle_half_width", &mut self.vehicle_half_width)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub pose: Pose6D,
    pub time: f64,
}

/// `y(x) = A·sin(2πx/λ + φ)`, heading along the tangent, stations every
/// `speed / rate` meters over `[0, row_length)`. Roll and pitch are zero and z
/// is `sensor_height`.
pub fn sinusoidal_trajectory(traj: &TrajectorySpec, row_length: f64, row_spacing: f64, sensor_height: f64) -> Result<Vec<TimedPose>> {
    if !(traj.speed > 0.0 && traj.rate_hz > 0.0 && traj.wavelength > 0.0 && row_length > 0.0) {
        return Err(invalid("trajectory speed, rate, wavelength and length must be positive"));
    }
    let limit = row_spacing / 2.0 - traj.vehicle_half_width;
    if !(traj.amplitude.abs() < limit) {
        return Err(invalid(format!("amplitude {} must be below {limit} m", traj.amplitude)));
    }
    let step = traj.speed / traj.rate_hz;
    let n = (row_length / step - 1e-9).ceil().max(1.0) as usize;
    let k = std::f64::consts::TAU / traj.wavelength;
    Ok((0..n)
        .map(|i| {
            let x = i as f64 * step;
            let y = traj.amplitude * (k * x + traj.phase).sin();
            let slope = traj.amplitude * k * (k * x + traj.phase).cos();
            TimedPose {
                pose: Pose6D::new(x, y, sensor_height, 0.0, 0.0, slope.atan()),
                time: i as f64 / traj.rate_hz,
            }
        })
        .collect())
}

/// Add per-frame attitude and height jitter to a trajectory.
pub fn jitter_attitude(poses: &[Pose6D], sigma: f64, seed: u64) -> Vec<Pose6D> {
    if sigma <= 0.0 {
        return poses.to_vec();
    }
    let mut rng = rng::rng(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    poses
        .iter()
        .map(|p| Pose6D::new(p.x, p.y, p.z + n.sample(&mut rng), p.roll + n.sample(&mut rng), p.pitch + n.sample(&mut rng), p.yaw))
        .collect()
}

/// Planar vehicle-frame increment from `a` to `b`.
pub fn relative_motion(a: &Pose6D, b: &Pose6D) -> (f64, f64, f64) {
    let (s, c) = a.yaw.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (c * dx + s * dy, -s * dx + c * dy, normalize_angle(b.yaw - a.yaw))
}

/// Compose a planar increment onto `a`.
pub fn compose_motion(a: &Pose6D, d: (f64, f64, f64)) -> Pose6D {
    let (s, c) = a.yaw.sin_cos();
    Pose6D::new(a.x + c * d.0 - s * d.1, a.y + s * d.0 + c * d.1, a.z, a.roll, a.pitch, a.yaw + d.2)
}

/// True increments between consecutive poses plus `N(0, Σ)` noise.
pub fn simulate_odometry(poses: &[Pose6D], cov: &Matrix3<f64>, seed: u64) -> Result<Vec<OdometryDelta>> {
    if poses.len() < 2 {
        return Err(invalid("odometry needs at least two poses"));
    }
    let noise = GaussianNoise::new(cov)?;
    let mut rng = rng::rng(seed);
    Ok(poses
        .windows(2)
        .map(|w| {
            let (dx, dy, dt) = relative_motion(&w[0], &w[1]);
            let e = noise.sample(&mut rng);
            OdometryDelta::new(dx + e.x, dy + e.y, dt + e.z, *cov)
        })
        .collect())
}

/// Along-row unit of a canopy point: 20 one-meter units per side.
fn unit_of(p: &Point3, tag: &PointTag) -> Option<usize> {
    match tag.class {
        PointClass::Ground => None,
        PointClass::Canopy(side) => {
            let u = (p.x.floor().max(0.0) as usize).min(19);
            Some(match side {
                Side::Left => u,
                Side::Right => 20 + u,
            })
        }
    }
}

/// Keep-mask for removing all canopy points of `n` of the 40 units (20 one-meter
/// along-row units per side of the template frame), drawn without replacement.
/// Ground points are always kept.
pub fn unit_tree_mask(cloud_t: &PointCloud, tags: &[PointTag], n: usize, seed: u64) -> Result<Vec<bool>> {
    if n > 40 {
        return Err(invalid(format!("unit-tree count must be in 0..=40, got {n}")));
    }
    if tags.len() != cloud_t.len() {
        return Err(Error::LengthMismatch {
            left: cloud_t.len(),
            right: tags.len(),
        });
    }
    let mut removed = [false; 40];
    for i in sample_indices(&mut rng::rng(seed), 40, n) {
        removed[i] = true;
    }
    Ok(cloud_t
        .points
        .iter()
        .zip(tags)
        .map(|(p, t)| unit_of(p, t).is_none_or(|u| !removed[u]))
        .collect())
}

pub fn apply_mask(cloud: &PointCloud, mask: &[bool]) -> PointCloud {
    PointCloud::new(
        cloud.points.iter().zip(mask).filter(|(_, &k)| k).map(|(p, _)| *p).collect(),
        cloud.frame,
    )
}

pub fn remove_unit_trees(cloud_t: &PointCloud, tags: &[PointTag], n: usize, seed: u64) -> Result<PointCloud> {
    Ok(apply_mask(cloud_t, &unit_tree_mask(cloud_t, tags, n, seed)?))
}

/// Keep-mask for points with `x ≤ d`.
pub fn row_end_mask(cloud_t: &PointCloud, d: f64) -> Result<Vec<bool>> {
    if !(d >= 0.0) {
        return Err(invalid(format!("row-end distance must be nonnegative, got {d}")));
    }
    Ok(cloud_t.points.iter().map(|p| p.x <= d).collect())
}

pub fn truncate_row_end(cloud_t: &PointCloud, d: f64) -> Result<PointCloud> {
    Ok(apply_mask(cloud_t, &row_end_mask(cloud_t, d)?))
}

/// Write `frame_00000.pc3d`, … and `truth.csv` into `dir`.
pub fn write_dataset(dir: &Path, frames: &[PointCloud], truth: &[Pose6D]) -> Result<()> {
    if frames.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: truth.len(),
        });
    }
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_cloud(&dir.join(frame_file_name(i)), f)?;
    }
    fs::write(dir.join("truth.csv"), truth_csv(truth))?;
    Ok(())
}

/// Read a directory written by [`write_dataset`]. Frames are taken in file
/// order; `truth.csv` is optional.
pub fn read_dataset(dir: &Path) -> Result<(Vec<PointCloud>, Option<Vec<Pose6D>>)> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pc3d"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::EmptyInput(format!("no .pc3d frames in {}", dir.display())));
    }
    let frames = names
        .iter()
        .map(|p| crate::geometry::io::read_cloud(p, Frame::Camera))
        .collect::<Result<Vec<_>>>()?;
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        let t = parse_truth_csv(&fs::read_to_string(truth_path)?)?;
        if t.len() != frames.len() {
            return Err(Error::LengthMismatch {
                left: frames.len(),
                right: t.len(),
            });
        }
        Some(t)
    } else {
        None
    };
    Ok((frames, truth))
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.pc3d")
}

pub const TRUTH_CSV_HEADER: &str = "frame,x,y,theta,alpha,beta,z";

pub fn truth_csv(truth: &[Pose6D]) -> String {
    let mut s = String::from(TRUTH_CSV_HEADER);
    s.push('\n');
    for (i, p) in truth.iter().enumerate() {
        writeln!(s, "{i},{},{},{},{},{},{}", p.x, p.y, p.yaw, p.roll, p.pitch, p.z).unwrap();
    }
    s
}

pub fn parse_truth_csv(text: &str) -> Result<Vec<Pose6D>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("frame") || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("truth line {}: {e}", i + 1)))?;
        if v.len() != 7 {
            return Err(Error::Parse(format!("truth line {}: expected 7 fields", i + 1)));
        }
        out.push(Pose6D::new(v[1], v[2], v[6], v[4], v[5], v[3]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_pose_transform, transform_cloud};

    fn wall() -> OrchardSpec {
        OrchardSpec {
            row_length: 30.0,
            tail_padding: 21.0,
            ground_roughness: 0.0,
            ..OrchardSpec::vineyard()
        }
    }

    #[test]
    fn presets_match_row_geometry() {
        let v = OrchardSpec::vineyard();
        assert_eq!((v.row_spacing, v.plant_spacing, v.row_length), (3.0, 1.8, 90.0));
        assert!(matches!(v.canopy, CanopyProfile::Wall { height, .. } if height == 2.2));
        let a = OrchardSpec::apricot();
        assert_eq!((a.row_spacing, a.plant_spacing, a.row_length), (5.0, 2.5, 50.0));
        assert!(OrchardSpec::preset("pear").is_err());
    }

    #[test]
    fn scene_is_deterministic_and_tagged() {
        let a = generate_scene(&wall(), 3).unwrap();
        assert_eq!(a, generate_scene(&wall(), 3).unwrap());
        assert_ne!(a.points, generate_scene(&wall(), 4).unwrap().points);
        for (p, t) in a.points.iter().zip(&a.tags) {
            match t.class {
                PointClass::Ground => assert_eq!(p.z, 0.0),
                PointClass::Canopy(side) => {
                    assert_eq!(side.sign(), p.y.signum());
                    assert!(p.x >= -0.1 && p.x <= 51.1 && p.z <= 2.2);
                    if t.row == 0 {
                        assert!((p.y.abs() - 1.5).abs() <= 0.25 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_density_is_ground_only() {
        let spec = OrchardSpec {
            foliage_density: 0.0,
            trunk_density: 0.0,
            ..wall()
        };
        let s = generate_scene(&spec, 1).unwrap();
        assert!(!s.is_empty());
        assert!(s.tags.iter().all(|t| t.class == PointClass::Ground));
    }

    #[test]
    fn gaps_remove_listed_plants() {
        let spec = OrchardSpec {
            gaps: vec![(Side::Left, 3)],
            ..wall()
        };
        let s = generate_scene(&spec, 1).unwrap();
        assert!(!s.tags.iter().any(|t| t.row == 0 && t.plant == 3 && t.class == PointClass::Canopy(Side::Left)));
        assert!(s.tags.iter().any(|t| t.row == 0 && t.plant == 3 && t.class == PointClass::Canopy(Side::Right)));
        assert!(matches!(parse_gap("x1"), Err(Error::Parse(_))));
        assert_eq!(parse_gap("R12").unwrap(), (Side::Right, 12));
    }

    #[test]
    fn symmetric_scene_renders_symmetric_cloud() {
        // Mirror a scene by hand so the construction is exactly symmetric.
        let base = generate_scene(&wall(), 5).unwrap();
        let mut points = base.points.clone();
        let mut tags = base.tags.clone();
        for (p, t) in base.points.iter().zip(&base.tags) {
            points.push(Point3::new(p.x, -p.y, p.z));
            tags.push(*t);
        }
        let scene = OrchardScene { points, tags, ..base };
        let sensor = SensorSpec::noiseless();
        let f = render_frame(&scene, &Pose6D::new(10.0, 0.0, 1.0, 0.0, 0.0, 0.0), &sensor, 1);
        let key = |p: &Point3| (p.x.to_bits(), p.y.abs().to_bits(), p.z.to_bits(), p.y > 0.0);
        let mut left: Vec<_> = f.cloud.points.iter().filter(|p| p.y > 0.0).map(key).map(|k| (k.0, k.1, k.2)).collect();
        let mut right: Vec<_> = f.cloud.points.iter().filter(|p| p.y < 0.0).map(key).map(|k| (k.0, k.1, k.2)).collect();
        left.sort_unstable();
        right.sort_unstable();
        assert!(!left.is_empty());
        assert_eq!(left, right);
    }

    #[test]
    fn rendered_points_lie_in_view() {
        let scene = generate_scene(&wall(), 6).unwrap();
        let sensor = SensorSpec {
            angular_resolution: None,
            ..SensorSpec::noiseless()
        };
        let pose = Pose6D::new(5.0, 0.3, 1.0, 0.02, -0.01, 0.2);
        let f = render_frame(&scene, &pose, &sensor, 2);
        assert!(f.cloud.len() > 500);
        assert!(f.cloud.points.iter().all(|p| sensor.in_view(p)));
        // Exactly the in-view scene points, by brute force.
        let rt = pose.to_transform().rotation.transpose();
        let o = Point3::new(pose.x, pose.y, pose.z);
        let expected = scene.points.iter().filter(|p| sensor.in_view(&Point3::from(rt * (*p - o)))).count();
        assert_eq!(f.cloud.len(), expected);
    }

    #[test]
    fn behind_sensor_is_empty() {
        let scene = generate_scene(&wall(), 7).unwrap();
        let f = render_frame(&scene, &Pose6D::new(60.0, 0.0, 1.0, 0.0, 0.0, 0.0), &SensorSpec::noiseless(), 1);
        assert!(f.cloud.is_empty());
    }

    #[test]
    fn noise_model() {
        let s = SensorSpec::default();
        assert!((s.sigma(3.0) - 0.06).abs() < 1e-12);
        assert!((s.sigma(15.0) - 0.6).abs() < 1e-12);
        assert!(s.sigma(1.0) < 0.02);
        // Empirical spread along the ray at 3 m.
        let scene = OrchardScene {
            spec: wall(),
            points: vec![Point3::new(3.0, 0.0, 1.0)],
            tags: vec![PointTag {
                class: PointClass::Ground,
                plant: 0,
                station: 3.0,
                row: 0,
            }],
        };
        let sensor = SensorSpec {
            detection_probability: 1.0,
            ..SensorSpec::default()
        };
        let pose = Pose6D::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let d: Vec<f64> = (0..4000).map(|i| render_frame(&scene, &pose, &sensor, i).cloud.points[0].x - 3.0).collect();
        let sd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd / 0.06 - 1.0).abs() < 0.05, "{sd}");
    }

    #[test]
    fn angular_binning_keeps_nearest() {
        let tag = PointTag {
            class: PointClass::Ground,
            plant: 0,
            station: 0.0,
            row: 0,
        };
        let scene = OrchardScene {
            spec: wall(),
            points: vec![Point3::new(5.0, 0.0, 1.0), Point3::new(4.0, 0.0, 1.0), Point3::new(4.0, 2.0, 1.0)],
            tags: vec![tag; 3],
        };
        let sensor = SensorSpec {
            angular_resolution: Some(0.01),
            ..SensorSpec::noiseless()
        };
        let f = render_frame(&scene, &Pose6D::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0), &sensor, 1);
        assert_eq!(f.cloud.points, vec![Point3::new(4.0, 0.0, 0.0), Point3::new(4.0, 2.0, 0.0)]);
    }

    #[test]
    fn trajectory_shape() {
        let t = TrajectorySpec {
            amplitude: 0.0,
            ..TrajectorySpec::default()
        };
        let p = sinusoidal_trajectory(&t, 90.0, 3.0, 1.0).unwrap();
        assert_eq!(p.len(), 1350);
        assert!(p.iter().all(|q| q.pose.y == 0.0 && q.pose.yaw == 0.0));
        let p = sinusoidal_trajectory(&TrajectorySpec::default(), 90.0, 3.0, 1.0).unwrap();
        let max = p.iter().map(|q| q.pose.yaw.abs()).fold(0.0, f64::max);
        let expected = (std::f64::consts::TAU * 0.3 / 20.0).atan();
        assert!(max <= expected + 1e-12 && max > expected - 1e-4);
        assert!((p[15].time - 1.0).abs() < 1e-12 && (p[15].pose.x - 1.0).abs() < 1e-12);
        let bad = TrajectorySpec {
            amplitude: 1.2,
            ..TrajectorySpec::default()
        };
        assert!(sinusoidal_trajectory(&bad, 90.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn odometry_composes_back() {
        let traj: Vec<Pose6D> = sinusoidal_trajectory(&TrajectorySpec::default(), 30.0, 3.0, 1.0)
            .unwrap()
            .iter()
            .map(|t| t.pose)
            .collect();
        let u = simulate_odometry(&traj, &Matrix3::zeros(), 1).unwrap();
        let mut p = traj[0];
        for (k, d) in u.iter().enumerate() {
            p = compose_motion(&p, (d.dx, d.dy, d.dtheta));
            let t = traj[k + 1];
            assert!((p.x - t.x).abs() < 1e-9 && (p.y - t.y).abs() < 1e-9 && (p.yaw - t.yaw).abs() < 1e-9);
        }
        let step = [Pose6D::default(), Pose6D::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0)];
        let u = simulate_odometry(&step, &Matrix3::zeros(), 1).unwrap();
        assert_eq!((u[0].dx, u[0].dy, u[0].dtheta), (0.1, 0.0, 0.0));
        assert!(simulate_odometry(&step[..1], &Matrix3::zeros(), 1).is_err());
    }

    #[test]
    fn stationary_odometry_is_noise() {
        let cov = Matrix3::from_diagonal(&nalgebra::Vector3::new(1e-4, 4e-4, 2.5e-5));
        let poses = vec![Pose6D::default(); 10_001];
        let u = simulate_odometry(&poses, &cov, 9).unwrap();
        let n = u.len() as f64;
        for (k, f) in [|d: &OdometryDelta| d.dx, |d: &OdometryDelta| d.dy, |d: &OdometryDelta| d.dtheta].iter().enumerate() {
            let v = u.iter().map(|d| f(d).powi(2)).sum::<f64>() / n;
            assert!((v / cov[(k, k)] - 1.0).abs() < 0.1, "axis {k}: {v}");
        }
    }

    fn tagged_frame() -> (PointCloud, Vec<PointTag>) {
        let scene = generate_scene(&wall(), 8).unwrap();
        let pose = Pose6D::new(4.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let f = render_frame(&scene, &pose, &SensorSpec::noiseless(), 3);
        let to_t = make_pose_transform(&Pose6D::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0));
        (transform_cloud(&to_t, &f.cloud).with_frame(Frame::Template), f.tags)
    }

    #[test]
    fn unit_tree_removal() {
        let (cloud, tags) = tagged_frame();
        assert_eq!(remove_unit_trees(&cloud, &tags, 0, 1).unwrap(), cloud);
        let all = remove_unit_trees(&cloud, &tags, 40, 1).unwrap();
        let n_ground = tags.iter().filter(|t| t.class == PointClass::Ground).count();
        assert_eq!(all.len(), n_ground);
        assert!(remove_unit_trees(&cloud, &tags, 41, 1).is_err());

        // Recount by predicate against the units actually drawn.
        let mask = unit_tree_mask(&cloud, &tags, 4, 77).unwrap();
        let chosen: Vec<usize> = sample_indices(&mut rng::rng(77), 40, 4).into_vec();
        for ((p, t), &keep) in cloud.points.iter().zip(&tags).zip(&mask) {
            let gone = match t.class {
                PointClass::Ground => false,
                PointClass::Canopy(side) => {
                    let u = (p.x.floor().clamp(0.0, 19.0)) as usize + if side == Side::Right { 20 } else { 0 };
                    chosen.contains(&u)
                }
            };
            assert_eq!(keep, !gone);
        }
    }

    #[test]
    fn row_end_truncation() {
        let (cloud, _) = tagged_frame();
        assert_eq!(truncate_row_end(&cloud, 20.0).unwrap(), cloud);
        assert!(truncate_row_end(&cloud, 0.0).unwrap().points.iter().all(|p| p.x <= 0.0));
        let kept = truncate_row_end(&cloud, 5.0).unwrap();
        assert_eq!(kept.len(), cloud.points.iter().filter(|p| p.x <= 5.0).count());
        assert!(truncate_row_end(&cloud, -1.0).is_err());
    }

    #[test]
    fn bending() {
        let r = 135.0;
        let q = bend_point(&Point3::new(std::f64::consts::PI * r / 2.0, 0.0, 0.5), r);
        assert!(((q - Point3::new(0.0, r, 0.5)).xy().norm() - r).abs() < 1e-9);
        assert!((q.x - r).abs() < 1e-9 && (q.y - r).abs() < 1e-9);
        let cloud = PointCloud::new((0..111).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(), Frame::Row);
        let bent = bend_row(&cloud, Some(r), 110.0).unwrap();
        for w in bent.points.windows(2) {
            // Chord length of a 1 m arc.
            let arc = 2.0 * r * ((w[1] - w[0]).norm() / (2.0 * r)).asin();
            assert!((arc - 1.0).abs() < 1e-9);
        }
        let back = unbend_row(&bent, Some(r));
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a - b).amax() < 1e-9);
        }
        let off = PointCloud::new(vec![Point3::new(40.0, 1.3, 2.0), Point3::new(3.0, -2.0, 0.1)], Frame::Row);
        let back = unbend_row(&bend_row(&off, Some(r), 110.0).unwrap(), Some(r));
        assert!((back.points[0] - off.points[0]).amax() < 1e-9 && (back.points[1] - off.points[1]).amax() < 1e-9);
        assert_eq!(bend_row(&cloud, None, 110.0).unwrap(), cloud);
        assert!(bend_row(&cloud, Some(30.0), 110.0).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = vec![Pose6D::new(0.0, 0.1, 1.0, 0.01, -0.02, 0.05), Pose6D::new(0.1, 0.12, 1.0, 0.0, 0.0, 0.04)];
        let frames = vec![PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)], Frame::Camera); 2];
        write_dataset(dir.path(), &frames, &truth).unwrap();
        assert!(dir.path().join("frame_00001.pc3d").exists());
        let text = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
        assert!(text.starts_with("frame,x,y,theta,alpha,beta,z\n0,0,0.1,0.05,0.01,-0.02,1\n"));
        assert_eq!(parse_truth_csv(&text).unwrap(), truth);
        let (back, t) = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].points, frames[0].points);
        assert_eq!(t.unwrap(), truth);
        assert!(read_dataset(tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn config_keys() {
        let kv = KvConfig::parse("scene.row_spacing = 4\nscene.gaps = L1, R2\nsensor.max_range = 10\ntrajectory.amplitude = 0.5\n").unwrap();
        let mut s = OrchardSpec::vineyard();
        s.apply_config(&kv).unwrap();
        assert_eq!(s.row_spacing, 4.0);
        assert_eq!(s.gaps, vec![(Side::Left, 1), (Side::Right, 2)]);
        let mut sensor = SensorSpec::default();
        sensor.apply_config(&kv).unwrap();
        assert_eq!(sensor.max_range, 10.0);
        let mut t = TrajectorySpec::default();
        t.apply_config(&kv).unwrap();
        assert_eq!(t.amplitude, 0.5);
    }
}
