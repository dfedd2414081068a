//! Experiment configuration: scene, sensor, trajectory, template and method
//! settings plus sweep parameters, read from `key = value` files.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineParams;
use crate::config::KvConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Box3, PreprocessConfig};
use crate::mcl::MclConfig;
use crate::measurement::DEFAULT_P_FLOOR;
use crate::synth::{OrchardSpec, SensorSpec, TrajectorySpec};
use crate::template::TemplateConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TemplateUniform,
    TemplatePf,
    Baseline1,
    Baseline2,
    Baseline2Refined,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TemplateUniform,
        Method::TemplatePf,
        Method::Baseline1,
        Method::Baseline2,
        Method::Baseline2Refined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TemplateUniform => "template-uniform",
            Method::TemplatePf => "template-pf",
            Method::Baseline1 => "baseline1",
            Method::Baseline2 => "baseline2",
            Method::Baseline2Refined => "baseline2-refined",
        }
    }

    pub fn is_template(self) -> bool {
        matches!(self, Method::TemplateUniform | Method::TemplatePf)
    }

    /// Methods whose estimate depends only on the current frame.
    pub fn is_single_frame(self) -> bool {
        self != Method::TemplatePf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}' (expected one of {})", Method::ALL.map(|m| m.name()).join(", "))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Steering rate per meter of lateral offset, rad/s/m.
    pub k_y: f64,
    /// Steering rate per radian of heading, 1/s.
    pub k_theta: f64,
    /// Steering-rate saturation, rad/s.
    pub max_rate: f64,
    /// Forward speed of the unicycle, m/s.
    pub speed: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_y: 0.8,
            k_theta: 1.5,
            max_rate: 0.5,
            speed: 1.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_y >= 0.0 && self.k_theta >= 0.0 && self.max_rate > 0.0 && self.speed > 0.0) {
            return Err(invalid(format!("gains must be nonnegative with positive saturation and speed: {self:?}")));
        }
        Ok(())
    }

    /// `ω = −k_y·y − k_θ·θ`, saturated.
    pub fn steering_rate(&self, y: f64, theta: f64) -> f64 {
        (-self.k_y * y - self.k_theta * theta).clamp(-self.max_rate, self.max_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub gap_counts: Vec<usize>,
    pub gap_draws: usize,
    pub rowend_distances: Vec<f64>,
    pub curvature_radii: Vec<f64>,
    pub sensor_ranges: Vec<f64>,
    pub voxel_sizes: Vec<f64>,
    pub template_counts: Vec<usize>,
    pub cross_rows: usize,
    /// Per-plant probability of a missing plant in the cross-row scenes.
    pub cross_gap_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gap_counts: (0..=40).step_by(2).collect(),
            gap_draws: 100,
            rowend_distances: vec![20.0, 15.0, 10.0, 5.0, 2.0, 1.0],
            curvature_radii: vec![135.0, 200.0, 300.0, 500.0],
            sensor_ranges: vec![10.0, 20.0],
            voxel_sizes: vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            template_counts: vec![1, 5, 10, 20, 100, 200, 300],
            cross_rows: 3,
            cross_gap_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Trajectory sinusoid for the comparison runs; large enough to reach
    /// headings near 0.5 rad.
    pub amplitude: f64,
    pub wavelength: f64,
    /// `|θ_true|` above which a frame counts as large-heading, radians.
    pub large_heading: f64,
    /// Height cutoff applied to every method, meters.
    pub z_max: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.55,
            wavelength: 6.0,
            large_heading: 0.3,
            z_max: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub gains: ControllerGains,
    pub y0: f64,
    pub theta0: f64,
    /// Control and measurement rate, Hz.
    pub rate_hz: f64,
    /// Distance driven, meters.
    pub length: f64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            y0: 0.3,
            theta0: 0.0,
            rate_hz: 5.0,
            length: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub scene: OrchardSpec,
    pub sensor: SensorSpec,
    pub trajectory: TrajectorySpec,
    pub template: TemplateConfig,
    pub pre: PreprocessConfig,
    pub mcl: MclConfig,
    pub baselines: BaselineParams,
    pub methods: Vec<Method>,
    pub p_floor: f64,
    /// Cutoff box for template scoring; `None` disables it.
    pub cutoff: Option<Box3>,
    /// Also run the accuracy study without the cutoff box.
    pub ablate_cutoff: bool,
    /// Odometry noise per evaluated step: σ of dx, dy (m) and dθ (rad).
    pub odometry_sd: [f64; 3],
    pub template_frames: usize,
    /// Evaluate every `eval_stride`-th trajectory frame.
    pub eval_stride: usize,
    /// Cap on evaluated frames; 0 means no cap.
    pub eval_limit: usize,
    pub sweeps: SweepConfig,
    pub compare: CompareConfig,
    pub closed_loop: ClosedLoopConfig,
    pub seed: u64,
}

/// Every key `ExperimentConfig::from_kv` understands.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "scene.preset",
    "scene.row_spacing",
    "scene.plant_spacing",
    "scene.row_length",
    "scene.tail_padding",
    "scene.foliage_density",
    "scene.surface_depth",
    "scene.neighbor_visibility",
    "scene.trunk_density",
    "scene.ground_density",
    "scene.ground_roughness",
    "scene.neighbor_rows",
    "scene.curvature_radius",
    "scene.wall_height",
    "scene.wall_thickness",
    "scene.wall_base",
    "scene.blob_rx",
    "scene.blob_ry",
    "scene.blob_rz",
    "scene.blob_center_height",
    "scene.gaps",
    "sensor.hfov_deg",
    "sensor.vfov_deg",
    "sensor.max_range",
    "sensor.noise_k",
    "sensor.noise_cap",
    "sensor.noise_enabled",
    "sensor.detection_probability",
    "sensor.height",
    "sensor.attitude_jitter",
    "sensor.angular_resolution",
    "trajectory.speed",
    "trajectory.rate_hz",
    "trajectory.amplitude",
    "trajectory.wavelength",
    "trajectory.phase",
    "trajectory.vehicle_half_width",
    "template.resolution",
    "template.no_info_frequency",
    "template.frames",
    "pre.leaf",
    "mcl.n_particles",
    "mcl.prior_y",
    "mcl.prior_theta",
    "mcl.top_fraction",
    "mcl.low_confidence_std_y",
    "mcl.low_confidence_std_theta",
    "measurement.p_floor",
    "eval.methods",
    "eval.cutoff",
    "eval.ablate_cutoff",
    "eval.stride",
    "eval.limit",
    "odometry.sd_xy",
    "odometry.sd_theta",
    "sweep.gap_counts",
    "sweep.gap_draws",
    "sweep.rowend_distances",
    "sweep.curvature_radii",
    "sweep.sensor_ranges",
    "sweep.voxel_sizes",
    "sweep.template_counts",
    "sweep.cross_rows",
    "sweep.cross_gap_fraction",
    "compare.amplitude",
    "compare.wavelength",
    "compare.large_heading",
    "compare.z_max",
    "closed_loop.k_y",
    "closed_loop.k_theta",
    "closed_loop.max_rate",
    "closed_loop.speed",
    "closed_loop.y0",
    "closed_loop.theta0",
    "closed_loop.rate_hz",
    "closed_loop.length",
];

impl ExperimentConfig {
    /// Defaults for a scene preset (`vineyard`/`wall` or `apricot`/`blob`).
    pub fn preset(name: &str) -> Result<Self> {
        let scene = OrchardSpec::preset(name)?;
        Ok(Self {
            preset: name.to_string(),
            template: TemplateConfig::for_row_spacing(scene.row_spacing),
            scene,
            sensor: SensorSpec::default(),
            trajectory: TrajectorySpec::default(),
            pre: PreprocessConfig::default(),
            mcl: MclConfig::default(),
            baselines: BaselineParams::default(),
            methods: vec![Method::TemplateUniform, Method::TemplatePf],
            p_floor: DEFAULT_P_FLOOR,
            cutoff: Some(Box3::evaluation_default()),
            ablate_cutoff: false,
            odometry_sd: [0.02, 0.02, 0.01],
            template_frames: 100,
            eval_stride: 1,
            eval_limit: 0,
            sweeps: SweepConfig::default(),
            compare: CompareConfig::default(),
            closed_loop: ClosedLoopConfig::default(),
            seed: 1,
        })
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.check_known(KNOWN_KEYS)?;
        let mut c = Self::preset(kv.get_str("scene.preset").unwrap_or("vineyard"))?;
        c.apply_kv(kv)?;
        Ok(c)
    }

    /// Overwrite fields named in `kv`; the preset is not changed.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.check_known(KNOWN_KEYS)?;
        kv.apply("seed", &mut self.seed)?;
        let spacing = self.scene.row_spacing;
        self.scene.apply_config(kv)?;
        if self.scene.row_spacing != spacing {
            let res = self.template.resolution;
            self.template = TemplateConfig {
                resolution: res,
                ..TemplateConfig::for_row_spacing(self.scene.row_spacing)
            };
        }
        self.sensor.apply_config(kv)?;
        self.trajectory.apply_config(kv)?;

        kv.apply("template.resolution", &mut self.template.resolution)?;
        match kv.get_str("template.no_info_frequency") {
            Some("auto") => self.template.no_info_frequency = None,
            Some(_) => self.template.no_info_frequency = kv.get("template.no_info_frequency")?,
            None => {}
        }
        kv.apply("template.frames", &mut self.template_frames)?;
        kv.apply("pre.leaf", &mut self.pre.leaf)?;
        self.baselines.pre.leaf = self.pre.leaf;

        kv.apply("mcl.n_particles", &mut self.mcl.n_particles)?;
        if let Some(y) = kv.get::<f64>("mcl.prior_y")? {
            self.mcl.prior.y_min = -y;
            self.mcl.prior.y_max = y;
        }
        if let Some(t) = kv.get::<f64>("mcl.prior_theta")? {
            self.mcl.prior.theta_min = -t;
            self.mcl.prior.theta_max = t;
        }
        kv.apply("mcl.top_fraction", &mut self.mcl.top_fraction)?;
        kv.apply("mcl.low_confidence_std_y", &mut self.mcl.low_confidence_std_y)?;
        kv.apply("mcl.low_confidence_std_theta", &mut self.mcl.low_confidence_std_theta)?;
        kv.apply("measurement.p_floor", &mut self.p_floor)?;

        if let Some(m) = kv.get_list::<Method>("eval.methods")? {
            self.methods = m;
        }
        if let Some(on) = kv.get::<bool>("eval.cutoff")? {
            self.cutoff = on.then(Box3::evaluation_default);
        }
        kv.apply("eval.ablate_cutoff", &mut self.ablate_cutoff)?;
        kv.apply("eval.stride", &mut self.eval_stride)?;
        kv.apply("eval.limit", &mut self.eval_limit)?;
        if let Some(s) = kv.get::<f64>("odometry.sd_xy")? {
            self.odometry_sd[0] = s;
            self.odometry_sd[1] = s;
        }
        kv.apply("odometry.sd_theta", &mut self.odometry_sd[2])?;

        let s = &mut self.sweeps;
        if let Some(v) = kv.get_list("sweep.gap_counts")? {
            s.gap_counts = v;
        }
        kv.apply("sweep.gap_draws", &mut s.gap_draws)?;
        if let Some(v) = kv.get_list("sweep.rowend_distances")? {
            s.rowend_distances = v;
        }
        if let Some(v) = kv.get_list("sweep.curvature_radii")? {
            s.curvature_radii = v;
        }
        if let Some(v) = kv.get_list("sweep.sensor_ranges")? {
            s.sensor_ranges = v;
        }
        if let Some(v) = kv.get_list("sweep.voxel_sizes")? {
            s.voxel_sizes = v;
        }
        if let Some(v) = kv.get_list("sweep.template_counts")? {
            s.template_counts = v;
        }
        kv.apply("sweep.cross_rows", &mut s.cross_rows)?;
        kv.apply("sweep.cross_gap_fraction", &mut s.cross_gap_fraction)?;

        kv.apply("compare.amplitude", &mut self.compare.amplitude)?;
        kv.apply("compare.wavelength", &mut self.compare.wavelength)?;
        kv.apply("compare.large_heading", &mut self.compare.large_heading)?;
        kv.apply("compare.z_max", &mut self.compare.z_max)?;

        let cl = &mut self.closed_loop;
        kv.apply("closed_loop.k_y", &mut cl.gains.k_y)?;
        kv.apply("closed_loop.k_theta", &mut cl.gains.k_theta)?;
        kv.apply("closed_loop.max_rate", &mut cl.gains.max_rate)?;
        kv.apply("closed_loop.speed", &mut cl.gains.speed)?;
        kv.apply("closed_loop.y0", &mut cl.y0)?;
        kv.apply("closed_loop.theta0", &mut cl.theta0)?;
        kv.apply("closed_loop.rate_hz", &mut cl.rate_hz)?;
        kv.apply("closed_loop.length", &mut cl.length)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sensor.validate()?;
        self.template.validate()?;
        self.baselines.validate()?;
        self.mcl.prior.validate()?;
        if self.mcl.n_particles == 0 {
            return Err(invalid("mcl.n_particles must be positive"));
        }
        if self.template_frames == 0 || self.eval_stride == 0 {
            return Err(invalid("template.frames and eval.stride must be positive"));
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        if !self.odometry_sd.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(invalid("odometry standard deviations must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.sweeps.cross_gap_fraction) {
            return Err(invalid("sweep.cross_gap_fraction must be in [0,1]"));
        }
        if self.sweeps.gap_counts.iter().any(|&n| n > 40) {
            return Err(invalid("gap counts must be in 0..=40"));
        }
        self.closed_loop.gains.validate()?;
        if !(self.closed_loop.rate_hz > 0.0 && self.closed_loop.length > 0.0) {
            return Err(invalid("closed_loop.rate_hz and closed_loop.length must be positive"));
        }
        if let Some(c) = &self.cutoff {
            c.validate()?;
        }
        Ok(())
    }

    /// Odometry covariance for one evaluated step; the per-frame variance
    /// accumulates over the stride.
    pub fn odometry_cov(&self) -> Matrix3<f64> {
        let v = Vector3::from(self.odometry_sd.map(|s| s * s)) * self.eval_stride as f64;
        Matrix3::from_diagonal(&v)
    }

    /// The scoring cutoff, or a box covering everything when disabled.
    pub fn cutoff_box(&self) -> Box3 {
        self.cutoff.unwrap_or(Box3 {
            min: [f64::NEG_INFINITY; 3],
            max: [f64::INFINITY; 3],
        })
    }
}
