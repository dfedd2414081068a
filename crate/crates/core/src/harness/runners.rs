use nalgebra::Matrix2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::metrics::{compute_metrics, spearman, ErrorMetrics};
use crate::baselines::{baseline1_projected, baseline2_projected, baseline2_refine_offset, project_preprocessed, BaselineParams};
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    make_pose_transform, normalize_angle, preprocess, transform_cloud, Box3, PointCloud, Pose6D, Preprocessed,
};
use crate::mcl::{flags, localize_pf, localize_uniform, EstimateRecord, OdometryDelta, ParticleSet, PoseEstimate};
use crate::measurement::{LikelihoodModel, PoseProposal, PreparedScan};
use crate::rng;
use crate::synth::{
    apply_mask, bend_pose, generate_scene, jitter_attitude, render_frame, row_end_mask, simulate_odometry,
    sinusoidal_trajectory, unit_tree_mask, OrchardScene, OrchardSpec, PointTag, SensorSpec, Side, TrajectorySpec,
};
use crate::template::{build_template, GroundTruthPose, Template, TemplateConfig};

/// One evaluation frame: the measured cloud and the pose it was taken from.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    /// Index along the evaluation trajectory; keys all per-frame seeds.
    pub index: usize,
    /// Straight-row pose: station, offset and heading relative to the centerline.
    pub pose: Pose6D,
    pub cloud: PointCloud,
    pub tags: Vec<PointTag>,
}

impl EvalFrame {
    pub fn truth(&self) -> PoseProposal {
        PoseProposal::new(self.pose.y, self.pose.yaw)
    }

    /// The cloud in the template frame: true attitude, offset and heading
    /// applied, station at the sensor.
    pub fn template_frame_cloud(&self) -> PointCloud {
        let p = Pose6D { x: 0.0, ..self.pose };
        transform_cloud(&make_pose_transform(&p), &self.cloud)
    }

    fn masked(&self, mask: &[bool]) -> Self {
        Self {
            cloud: apply_mask(&self.cloud, mask),
            tags: self.tags.iter().zip(mask).filter(|(_, &k)| k).map(|(t, _)| *t).collect(),
            ..self.clone()
        }
    }
}

/// Per-method estimates over a frame sequence.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub records: Vec<EstimateRecord>,
    /// Frames where preprocessing or the method itself failed; they carry a
    /// zero estimate flagged empty and low-confidence.
    pub failures: usize,
}

impl MethodResult {
    pub(crate) fn truths(&self) -> impl Iterator<Item = (&EstimateRecord, PoseProposal)> {
        self.records.iter().filter_map(|r| r.truth.map(|t| (r, t)))
    }

    pub fn lateral_errors(&self) -> Vec<f64> {
        self.truths().map(|(r, t)| r.estimate.pose.y - t.y).collect()
    }

    pub fn heading_errors(&self) -> Vec<f64> {
        self.truths().map(|(r, t)| normalize_angle(r.estimate.pose.theta - t.theta)).collect()
    }

    pub fn lateral(&self) -> Result<ErrorMetrics> {
        compute_metrics(&self.lateral_errors())
    }

    pub fn heading(&self) -> Result<ErrorMetrics> {
        compute_metrics(&self.heading_errors())
    }

    pub fn low_confidence_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.estimate.has(flags::LOW_CONFIDENCE)).count() as f64 / self.records.len() as f64
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.records.len().max(1) as f64;
        let (sy, st) = self
            .records
            .iter()
            .fold((0.0, 0.0), |(a, b), r| (a + r.estimate.std_y, b + r.estimate.std_theta));
        (sy / n, st / n)
    }

    /// Keep records whose truth satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(PoseProposal) -> bool) -> Self {
        Self {
            method: self.method,
            records: self.records.iter().filter(|r| r.truth.is_some_and(&keep)).copied().collect(),
            failures: 0,
        }
    }

    pub fn summary(&self) -> Result<Summary> {
        let (std_y, std_theta) = self.mean_std();
        Ok(Summary {
            method: self.method,
            lateral: self.lateral()?,
            heading: self.heading()?,
            mean_std_y: std_y,
            mean_std_theta: std_theta,
            low_confidence_rate: self.low_confidence_rate(),
            failures: self.failures,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub method: Method,
    pub lateral: ErrorMetrics,
    pub heading: ErrorMetrics,
    pub mean_std_y: f64,
    pub mean_std_theta: f64,
    pub low_confidence_rate: f64,
    pub failures: usize,
}

/// One cell of a sweep: its parameters and the estimates it produced.
#[derive(Debug, Clone)]
pub struct Cell {
    pub params: Vec<(&'static str, f64)>,
    pub result: MethodResult,
    /// Additional per-cell quantities, such as template sizes.
    pub extra: Vec<(&'static str, f64)>,
}

impl Cell {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().chain(&self.extra).find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

fn failure_estimate(prior_cov: Matrix2<f64>) -> PoseEstimate {
    PoseEstimate::new(PoseProposal::new(0.0, 0.0), prior_cov, 0.0, flags::EMPTY | flags::LOW_CONFIDENCE)
}

/// Sensor poses along the sinusoidal trajectory with attitude jitter.
pub fn trajectory_poses(cfg: &ExperimentConfig, traj: &TrajectorySpec, label: &str) -> Result<Vec<Pose6D>> {
    let t = sinusoidal_trajectory(traj, cfg.scene.row_length, cfg.scene.row_spacing, cfg.sensor.height)?;
    let poses: Vec<Pose6D> = t.iter().map(|p| p.pose).collect();
    Ok(jitter_attitude(&poses, cfg.sensor.attitude_jitter, rng::derive(cfg.seed, label)))
}

/// Trajectory indices evaluated under `eval_stride` and `eval_limit`.
pub fn eval_indices(cfg: &ExperimentConfig, n: usize) -> Vec<usize> {
    let it = (0..n).step_by(cfg.eval_stride);
    if cfg.eval_limit > 0 {
        it.take(cfg.eval_limit).collect()
    } else {
        it.collect()
    }
}

/// Render template-building frames `0..n` of `poses`.
pub fn render_template_frames(scene: &OrchardScene, poses: &[Pose6D], sensor: &SensorSpec, n: usize, seed: u64) -> Result<Vec<PointCloud>> {
    if n > poses.len() {
        return Err(invalid(format!("{n} template frames requested, trajectory has {}", poses.len())));
    }
    Ok(poses[..n]
        .iter()
        .enumerate()
        .map(|(i, p)| render_frame(scene, p, sensor, rng::derive_index(seed, "frame", i as u64)).cloud)
        .collect())
}

pub fn template_from_frames(cfg: &ExperimentConfig, clouds: &[PointCloud], poses: &[Pose6D], tcfg: &TemplateConfig) -> Result<Template> {
    let truths: Vec<GroundTruthPose> = poses[..clouds.len()].iter().map(|p| GroundTruthPose::new(p.y, p.yaw)).collect();
    let pre = crate::geometry::PreprocessConfig {
        seed: rng::derive(cfg.seed, "template-preprocess"),
        ..cfg.pre.clone()
    };
    build_template(clouds, &truths, tcfg, &pre)
}

/// Render frames at `poses[i]` for the given indices. `bend` maps the
/// straight-row pose to the pose actually rendered.
pub fn render_eval_frames(
    scene: &OrchardScene,
    poses: &[Pose6D],
    indices: &[usize],
    sensor: &SensorSpec,
    seed: u64,
    bend: Option<f64>,
) -> Vec<EvalFrame> {
    indices
        .iter()
        .map(|&i| {
            let pose = poses[i];
            let r = render_frame(scene, &bend_pose(&pose, bend), sensor, rng::derive_index(seed, "frame", i as u64));
            EvalFrame {
                index: i,
                pose,
                cloud: r.cloud,
                tags: r.tags,
            }
        })
        .collect()
}

/// Template scene, evaluation scene and both trajectories of a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub template_scene: OrchardScene,
    pub eval_scene: OrchardScene,
    pub template_poses: Vec<Pose6D>,
    pub eval_poses: Vec<Pose6D>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            template_scene: generate_scene(&cfg.scene, rng::derive(cfg.seed, "template-scene"))?,
            eval_scene: generate_scene(&cfg.scene, rng::derive(cfg.seed, "eval-scene"))?,
            template_poses: trajectory_poses(cfg, &cfg.trajectory, "template-trajectory")?,
            eval_poses: trajectory_poses(cfg, &cfg.trajectory, "eval-trajectory")?,
        })
    }

    pub fn template_frames(&self, cfg: &ExperimentConfig, sensor: &SensorSpec, n: usize) -> Result<Vec<PointCloud>> {
        render_template_frames(&self.template_scene, &self.template_poses, sensor, n, rng::derive(cfg.seed, "template-frames"))
    }

    pub fn template(&self, cfg: &ExperimentConfig, sensor: &SensorSpec, tcfg: &TemplateConfig, n: usize) -> Result<Template> {
        let clouds = self.template_frames(cfg, sensor, n)?;
        template_from_frames(cfg, &clouds, &self.template_poses, tcfg)
    }

    pub fn eval_frames(&self, cfg: &ExperimentConfig, sensor: &SensorSpec) -> Vec<EvalFrame> {
        let idx = eval_indices(cfg, self.eval_poses.len());
        render_eval_frames(&self.eval_scene, &self.eval_poses, &idx, sensor, rng::derive(cfg.seed, "eval-frames"), None)
    }
}

/// Runs methods over frames with shared preprocessing.
pub struct Localizer<'a> {
    pub cfg: &'a ExperimentConfig,
    /// Required by the template methods only.
    pub model: Option<&'a LikelihoodModel>,
    pub cutoff: Box3,
    pub baselines: BaselineParams,
}

impl<'a> Localizer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, model: &'a LikelihoodModel) -> Self {
        Self {
            model: Some(model),
            ..Self::without_template(cfg)
        }
    }

    /// A localizer for the baselines alone.
    pub fn without_template(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            model: None,
            cutoff: cfg.cutoff_box(),
            baselines: cfg.baselines.clone(),
        }
    }

    fn model(&self) -> Result<&'a LikelihoodModel> {
        self.model.ok_or_else(|| invalid("template methods need a template"))
    }

    pub fn preprocess(&self, cloud: &PointCloud, index: usize) -> Option<Preprocessed> {
        let pre = crate::geometry::PreprocessConfig {
            seed: rng::derive_index(self.cfg.seed, "preprocess", index as u64),
            ..self.cfg.pre.clone()
        };
        preprocess(cloud, &pre).ok()
    }

    pub fn scan(&self, pp: Option<&Preprocessed>) -> PreparedScan {
        pp.map(|p| PreparedScan::from_preprocessed(p, &self.cutoff)).unwrap_or_else(PreparedScan::empty)
    }

    /// Estimate from one frame alone. `None` marks a failure.
    pub fn single(&self, method: Method, pp: Option<&Preprocessed>, index: usize) -> Result<Option<PoseEstimate>> {
        let Some(pp) = pp else { return Ok(None) };
        let seed = |label: &str| rng::derive_index(self.cfg.seed, label, index as u64);
        let zero = Matrix2::zeros();
        let line = |y: f64, theta: f64| Some(PoseEstimate::new(PoseProposal::new(y, theta), zero, 0.0, 0));
        match method {
            Method::TemplateUniform => {
                let scan = self.scan(Some(pp));
                let est = localize_uniform(&scan, self.model()?, &self.cfg.mcl.prior, self.cfg.mcl.n_particles, seed("uniform"), &self.cfg.mcl)?;
                Ok(Some(est))
            }
            Method::TemplatePf => Err(invalid("template-pf needs a frame sequence")),
            Method::Baseline1 => {
                let proj = project_preprocessed(pp, &self.baselines);
                Ok(baseline1_projected(&proj, &self.baselines, seed("baseline")).ok().and_then(|e| line(e.y, e.theta)))
            }
            Method::Baseline2 | Method::Baseline2Refined => {
                let proj = project_preprocessed(pp, &self.baselines);
                let Ok((e, pair)) = baseline2_projected(&proj, &self.baselines, seed("baseline")) else {
                    return Ok(None);
                };
                if method == Method::Baseline2 {
                    return Ok(line(e.y, e.theta));
                }
                Ok(baseline2_refine_offset(&proj, &pair, &self.baselines).ok().and_then(|y| line(y, e.theta)))
            }
        }
    }

    /// Run `methods` over `frames`. `odometry[k]` is the measured motion from
    /// frame `k` to frame `k + 1`, required when the particle filter is selected.
    pub fn run(&self, frames: &[EvalFrame], methods: &[Method], odometry: Option<&[OdometryDelta]>) -> Result<Vec<MethodResult>> {
        let mut results: Vec<MethodResult> = methods
            .iter()
            .map(|&method| MethodResult {
                method,
                records: Vec::with_capacity(frames.len()),
                failures: 0,
            })
            .collect();
        let pf_cov = self.cfg.odometry_cov();
        let mut pf = if methods.contains(&Method::TemplatePf) {
            if frames.len() > 1 && odometry.is_none_or(|o| o.len() + 1 < frames.len()) {
                return Err(invalid("template-pf needs odometry between consecutive frames"));
            }
            Some(ParticleSet::from_prior(&self.cfg.mcl.prior, self.cfg.mcl.n_particles, rng::derive(self.cfg.seed, "pf-init"))?)
        } else {
            None
        };
        let prior_cov = self.cfg.mcl.prior.covariance();
        for (k, f) in frames.iter().enumerate() {
            let pp = self.preprocess(&f.cloud, f.index);
            for r in results.iter_mut() {
                let est = if r.method == Method::TemplatePf {
                    let set = pf.as_ref().expect("particle set");
                    let u = match (k, odometry) {
                        (0, _) | (_, None) => OdometryDelta::new(0.0, 0.0, 0.0, pf_cov),
                        (_, Some(o)) => o[k - 1],
                    };
                    let (est, next) = localize_pf(&self.scan(pp.as_ref()), set, &u, self.model()?, &self.cfg.mcl)?;
                    pf = Some(next);
                    if pp.is_none() {
                        r.failures += 1;
                    }
                    est
                } else {
                    match self.single(r.method, pp.as_ref(), f.index)? {
                        Some(e) => e,
                        None => {
                            r.failures += 1;
                            failure_estimate(prior_cov)
                        }
                    }
                };
                r.records.push(EstimateRecord {
                    frame: f.index,
                    estimate: est,
                    truth: Some(f.truth()),
                });
            }
        }
        Ok(results)
    }

    pub fn run_single(&self, frames: &[EvalFrame], method: Method) -> Result<MethodResult> {
        if !method.is_single_frame() {
            return Err(invalid(format!("{method} is not a single-frame method")));
        }
        Ok(self.run(frames, &[method], None)?.remove(0))
    }
}

/// Simulated odometry between consecutive evaluation frames.
pub fn frame_odometry(cfg: &ExperimentConfig, frames: &[EvalFrame], label: &str) -> Result<Option<Vec<OdometryDelta>>> {
    if frames.len() < 2 {
        return Ok(None);
    }
    let poses: Vec<Pose6D> = frames.iter().map(|f| f.pose).collect();
    simulate_odometry(&poses, &cfg.odometry_cov(), rng::derive(cfg.seed, label)).map(Some)
}

pub fn model_for(cfg: &ExperimentConfig, template: &Template) -> Result<LikelihoodModel> {
    LikelihoodModel::new(template, cfg.p_floor)
}

/// The single-frame method used by the degradation sweeps.
pub fn sweep_method(cfg: &ExperimentConfig) -> Result<Method> {
    cfg.methods
        .iter()
        .copied()
        .find(|m| m.is_single_frame())
        .ok_or_else(|| invalid("sweeps need a single-frame method (template-uniform or a baseline)"))
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub with_cutoff: Vec<MethodResult>,
    pub without_cutoff: Option<Vec<MethodResult>>,
}

impl AccuracyReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.with_cutoff.iter().find(|r| r.method == method)
    }
}

pub fn run_accuracy(cfg: &ExperimentConfig) -> Result<AccuracyReport> {
    let setup = Setup::new(cfg)?;
    let template = setup.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?;
    let frames = setup.eval_frames(cfg, &cfg.sensor);
    run_accuracy_on(cfg, &template, &frames)
}

/// Accuracy study on prepared frames with a prebuilt template.
pub fn run_accuracy_on(cfg: &ExperimentConfig, template: &Template, frames: &[EvalFrame]) -> Result<AccuracyReport> {
    let model = model_for(cfg, template)?;
    let odo = frame_odometry(cfg, frames, "odometry")?;
    let loc = Localizer::new(cfg, &model);
    let with_cutoff = loc.run(frames, &cfg.methods, odo.as_deref())?;
    let without_cutoff = if cfg.ablate_cutoff && cfg.cutoff.is_some() {
        let open = Localizer {
            cutoff: ExperimentConfig { cutoff: None, ..cfg.clone() }.cutoff_box(),
            ..Localizer::new(cfg, &model)
        };
        Some(open.run(frames, &cfg.methods, odo.as_deref())?)
    } else {
        None
    };
    Ok(AccuracyReport {
        with_cutoff,
        without_cutoff,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub kind: &'static str,
    pub cells: Vec<Cell>,
}

impl SweepReport {
    pub fn cell(&self, name: &str, value: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.param(name) == Some(value))
    }
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub sweep: SweepReport,
    /// Rank correlation of per-n mean `std_y` with per-n lateral MAE.
    pub spearman_y: f64,
    pub spearman_theta: f64,
    /// Same correlation over individual frames, `std_y` against `|e_y|`.
    pub frame_spearman_y: f64,
    pub frame_spearman_theta: f64,
}

/// Unit-tree removal: for each `n`, `gap_draws` random removals, each applied
/// to one frame of the evaluation pool in turn.
pub fn run_gap_sweep(cfg: &ExperimentConfig) -> Result<GapReport> {
    let method = sweep_method(cfg)?;
    let setup = Setup::new(cfg)?;
    let template = setup.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?;
    let model = model_for(cfg, &template)?;
    let pool = setup.eval_frames(cfg, &cfg.sensor);
    if pool.is_empty() || cfg.sweeps.gap_draws == 0 {
        return Err(Error::EmptyInput("gap sweep needs frames and draws".into()));
    }
    let t_clouds: Vec<PointCloud> = pool.iter().map(EvalFrame::template_frame_cloud).collect();
    let loc = Localizer::new(cfg, &model);
    let mut cells = Vec::new();
    for &n in &cfg.sweeps.gap_counts {
        let cell_seed = rng::derive_index(cfg.seed, "gaps", n as u64);
        let mut frames = Vec::with_capacity(cfg.sweeps.gap_draws);
        for d in 0..cfg.sweeps.gap_draws {
            let j = d % pool.len();
            let mask = unit_tree_mask(&t_clouds[j], &pool[j].tags, n, rng::derive_index(cell_seed, "draw", d as u64))?;
            frames.push(pool[j].masked(&mask));
        }
        cells.push(Cell {
            params: vec![("n_removed", n as f64)],
            result: loc.run_single(&frames, method)?,
            extra: Vec::new(),
        });
    }
    let mut mae_y = Vec::new();
    let mut mae_t = Vec::new();
    let mut std_y = Vec::new();
    let mut std_t = Vec::new();
    for c in &cells {
        let (sy, st) = c.result.mean_std();
        mae_y.push(c.result.lateral()?.mae);
        mae_t.push(c.result.heading()?.mae);
        std_y.push(sy);
        std_t.push(st);
    }
    let (spearman_y, spearman_theta) = if cells.len() >= 2 {
        (spearman(&std_y, &mae_y)?, spearman(&std_t, &mae_t)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    let (mut fy, mut fsy, mut ft, mut fst) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for c in &cells {
        fy.extend(c.result.lateral_errors().iter().map(|e| e.abs()));
        ft.extend(c.result.heading_errors().iter().map(|e| e.abs()));
        for (r, _) in c.result.truths() {
            fsy.push(r.estimate.std_y);
            fst.push(r.estimate.std_theta);
        }
    }
    let (frame_spearman_y, frame_spearman_theta) = if fy.len() >= 2 && fy.len() == fsy.len() {
        (spearman(&fsy, &fy)?, spearman(&fst, &ft)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(GapReport {
        sweep: SweepReport { kind: "gaps", cells },
        spearman_y,
        spearman_theta,
        frame_spearman_y,
        frame_spearman_theta,
    })
}

/// Row-end truncation: points farther than `d` along the row are removed.
pub fn run_rowend_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let method = sweep_method(cfg)?;
    let setup = Setup::new(cfg)?;
    let template = setup.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?;
    let model = model_for(cfg, &template)?;
    let pool = setup.eval_frames(cfg, &cfg.sensor);
    let t_clouds: Vec<PointCloud> = pool.iter().map(EvalFrame::template_frame_cloud).collect();
    let loc = Localizer::new(cfg, &model);
    let mut cells = Vec::new();
    for &d in &cfg.sweeps.rowend_distances {
        let frames = pool
            .iter()
            .zip(&t_clouds)
            .map(|(f, t)| Ok(f.masked(&row_end_mask(t, d)?)))
            .collect::<Result<Vec<_>>>()?;
        cells.push(Cell {
            params: vec![("distance", d)],
            result: loc.run_single(&frames, method)?,
            extra: Vec::new(),
        });
    }
    Ok(SweepReport { kind: "rowend", cells })
}

/// Straight-row templates evaluated on bent rows, one template per sensor
/// range. The `radius = inf` cell of each range is the straight row.
pub fn run_curvature_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let method = sweep_method(cfg)?;
    let setup = Setup::new(cfg)?;
    let idx = eval_indices(cfg, setup.eval_poses.len());
    let eval_seed = rng::derive(cfg.seed, "eval-frames");
    let mut cells = Vec::new();
    for &range in &cfg.sweeps.sensor_ranges {
        let sensor = SensorSpec {
            max_range: range,
            ..cfg.sensor.clone()
        };
        sensor.validate()?;
        let template = setup.template(cfg, &sensor, &cfg.template, cfg.template_frames)?;
        let model = model_for(cfg, &template)?;
        let loc = Localizer::new(cfg, &model);
        let straight = render_eval_frames(&setup.eval_scene, &setup.eval_poses, &idx, &sensor, eval_seed, None);
        cells.push(Cell {
            params: vec![("sensor_range", range), ("radius", f64::INFINITY)],
            result: loc.run_single(&straight, method)?,
            extra: Vec::new(),
        });
        drop(straight);
        for &r in &cfg.sweeps.curvature_radii {
            let spec = OrchardSpec {
                curvature_radius: Some(r),
                ..cfg.scene.clone()
            };
            let scene = generate_scene(&spec, rng::derive(cfg.seed, "eval-scene"))?;
            let frames = render_eval_frames(&scene, &setup.eval_poses, &idx, &sensor, eval_seed, Some(r));
            cells.push(Cell {
                params: vec![("sensor_range", range), ("radius", r)],
                result: loc.run_single(&frames, method)?,
                extra: Vec::new(),
            });
        }
    }
    Ok(SweepReport { kind: "curvature", cells })
}

/// Rebuild the template at each voxel size from the same frames.
pub fn run_voxel_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let method = sweep_method(cfg)?;
    let setup = Setup::new(cfg)?;
    let clouds = setup.template_frames(cfg, &cfg.sensor, cfg.template_frames)?;
    let frames = setup.eval_frames(cfg, &cfg.sensor);
    let mut cells = Vec::new();
    for &size in &cfg.sweeps.voxel_sizes {
        let tcfg = TemplateConfig {
            resolution: size,
            ..cfg.template.clone()
        };
        let template = template_from_frames(cfg, &clouds, &setup.template_poses, &tcfg)?;
        let extra = vec![("voxels", template.voxel_count() as f64), ("bytes", template.encoded_len() as f64)];
        let model = model_for(cfg, &template)?;
        drop(template);
        let result = Localizer::new(cfg, &model).run_single(&frames, method)?;
        cells.push(Cell {
            params: vec![("voxel_size", size)],
            result,
            extra,
        });
    }
    Ok(SweepReport { kind: "voxel", cells })
}

/// Templates from the first `n` frames for each configured count.
pub fn run_template_size_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let method = sweep_method(cfg)?;
    let setup = Setup::new(cfg)?;
    let max = cfg.sweeps.template_counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(invalid("template counts must be positive"));
    }
    let clouds = setup.template_frames(cfg, &cfg.sensor, max)?;
    let frames = setup.eval_frames(cfg, &cfg.sensor);
    let mut cells = Vec::new();
    for &n in &cfg.sweeps.template_counts {
        if n == 0 {
            return Err(invalid("template counts must be positive"));
        }
        let template = template_from_frames(cfg, &clouds[..n], &setup.template_poses, &cfg.template)?;
        let model = model_for(cfg, &template)?;
        cells.push(Cell {
            params: vec![("frames", n as f64)],
            result: Localizer::new(cfg, &model).run_single(&frames, method)?,
            extra: Vec::new(),
        });
    }
    Ok(SweepReport { kind: "template_size", cells })
}

#[derive(Debug, Clone)]
pub struct CrossReport {
    pub k: usize,
    /// Row-major: `cells[k·template_row + eval_row]`.
    pub sweep: SweepReport,
}

impl CrossReport {
    pub fn lateral_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.matrix(|r| r.lateral().map(|m| m.mae))
    }

    pub fn heading_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.matrix(|r| r.heading().map(|m| m.mae))
    }

    fn matrix(&self, f: impl Fn(&MethodResult) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
        (0..self.k)
            .map(|t| (0..self.k).map(|e| f(&self.sweep.cells[t * self.k + e].result)).collect())
            .collect()
    }
}

/// Random missing plants along both sides of the traversed row.
pub fn random_gaps(spec: &OrchardSpec, fraction: f64, seed: u64) -> Vec<(Side, usize)> {
    let n_plants = (spec.scene_length() / spec.plant_spacing).floor() as usize + 1;
    let mut r = rng::rng(seed);
    let mut gaps = Vec::new();
    for side in [Side::Left, Side::Right] {
        for i in 0..n_plants {
            if r.random::<f64>() < fraction {
                gaps.push((side, i));
            }
        }
    }
    gaps
}

/// One template per row, each evaluated on every row.
pub fn run_cross_template_matrix(cfg: &ExperimentConfig) -> Result<CrossReport> {
    let k = cfg.sweeps.cross_rows;
    if k < 2 {
        return Err(invalid(format!("cross-row matrix needs at least 2 rows, got {k}")));
    }
    let method = sweep_method(cfg)?;
    cfg.validate()?;
    let template_poses = trajectory_poses(cfg, &cfg.trajectory, "template-trajectory")?;
    let eval_poses = trajectory_poses(cfg, &cfg.trajectory, "eval-trajectory")?;
    let idx = eval_indices(cfg, eval_poses.len());
    let mut models = Vec::with_capacity(k);
    let mut evals = Vec::with_capacity(k);
    for j in 0..k {
        let spec = OrchardSpec {
            gaps: random_gaps(&cfg.scene, cfg.sweeps.cross_gap_fraction, rng::derive_index(cfg.seed, "cross-gaps", j as u64)),
            ..cfg.scene.clone()
        };
        let scene = generate_scene(&spec, rng::derive_index(cfg.seed, "cross-scene", j as u64))?;
        let clouds = render_template_frames(&scene, &template_poses, &cfg.sensor, cfg.template_frames, rng::derive_index(cfg.seed, "cross-template", j as u64))?;
        let template = template_from_frames(cfg, &clouds, &template_poses, &cfg.template)?;
        models.push(model_for(cfg, &template)?);
        evals.push(render_eval_frames(&scene, &eval_poses, &idx, &cfg.sensor, rng::derive_index(cfg.seed, "cross-eval", j as u64), None));
    }
    let mut cells = Vec::with_capacity(k * k);
    for (t, model) in models.iter().enumerate() {
        let loc = Localizer::new(cfg, model);
        for (e, frames) in evals.iter().enumerate() {
            cells.push(Cell {
                params: vec![("template_row", t as f64), ("eval_row", e as f64)],
                result: loc.run_single(frames, method)?,
                extra: Vec::new(),
            });
        }
    }
    Ok(CrossReport {
        k,
        sweep: SweepReport { kind: "cross", cells },
    })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub large_heading: f64,
    pub results: Vec<MethodResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: Method,
    pub all: Summary,
    /// `None` when no frame exceeds the heading threshold.
    pub large: Option<Summary>,
    pub lateral_degradation: f64,
    pub heading_degradation: f64,
    pub large_fraction: f64,
}

impl CompareReport {
    pub fn large(&self, r: &MethodResult) -> MethodResult {
        let t = self.large_heading;
        r.filter(|p| p.theta.abs() > t)
    }

    pub fn rows(&self) -> Result<Vec<CompareRow>> {
        self.results
            .iter()
            .map(|r| {
                let all = r.summary()?;
                let l = self.large(r);
                let large = if l.records.is_empty() { None } else { Some(l.summary()?) };
                let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
                Ok(CompareRow {
                    method: r.method,
                    all,
                    large,
                    lateral_degradation: large.map_or(f64::NAN, |s| ratio(s.lateral.mae, all.lateral.mae)),
                    heading_degradation: large.map_or(f64::NAN, |s| ratio(s.heading.mae, all.heading.mae)),
                    large_fraction: l.records.len() as f64 / r.records.len().max(1) as f64,
                })
            })
            .collect()
    }
}

/// All methods on identical frames of a wide sinusoid, with the height
/// cutoff applied to the template cutoff box and the baseline prefilter.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let setup = Setup::new(cfg)?;
    let template = setup.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?;
    let traj = TrajectorySpec {
        amplitude: cfg.compare.amplitude,
        wavelength: cfg.compare.wavelength,
        ..cfg.trajectory.clone()
    };
    let poses = trajectory_poses(cfg, &traj, "compare-trajectory")?;
    let idx = eval_indices(cfg, poses.len());
    let frames = render_eval_frames(&setup.eval_scene, &poses, &idx, &cfg.sensor, rng::derive(cfg.seed, "compare-frames"), None);
    run_compare_on(cfg, &template, &frames)
}

pub fn run_compare_on(cfg: &ExperimentConfig, template: &Template, frames: &[EvalFrame]) -> Result<CompareReport> {
    let model = model_for(cfg, template)?;
    let mut loc = Localizer::new(cfg, &model);
    loc.cutoff.max[2] = loc.cutoff.max[2].min(cfg.compare.z_max);
    loc.baselines.prefilter.max[2] = loc.baselines.prefilter.max[2].min(cfg.compare.z_max);
    let odo = frame_odometry(cfg, frames, "odometry")?;
    let results = loc.run(frames, &Method::ALL, odo.as_deref())?;
    Ok(CompareReport {
        large_heading: cfg.compare.large_heading,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedLoopStep {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub y_est: f64,
    pub theta_est: f64,
    pub omega: f64,
    pub flags: u8,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopReport {
    pub steps: Vec<ClosedLoopStep>,
    /// |y| of the true trajectory.
    pub offset: ErrorMetrics,
    /// |yaw| of the true trajectory.
    pub heading: ErrorMetrics,
    pub localization_lateral: ErrorMetrics,
    pub localization_heading: ErrorMetrics,
}

pub const CLOSED_LOOP_CSV_HEADER: &str = "step,x,y,yaw,y_est,theta_est,omega,flags";

/// Unicycle along the evaluation row under `ω = −k_y·ŷ − k_θ·θ̂`, with
/// template-uniform localization from each rendered frame. Fails with
/// `Divergence` once |y| exceeds half the row spacing.
pub fn closed_loop_sim(cfg: &ExperimentConfig) -> Result<ClosedLoopReport> {
    let setup = Setup::new(cfg)?;
    let template = setup.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?;
    closed_loop_on(cfg, &setup.eval_scene, &template)
}

pub fn closed_loop_on(cfg: &ExperimentConfig, scene: &OrchardScene, template: &Template) -> Result<ClosedLoopReport> {
    let cl = &cfg.closed_loop;
    cl.gains.validate()?;
    let model = model_for(cfg, template)?;
    let loc = Localizer::new(cfg, &model);
    let dt = 1.0 / cl.rate_hz;
    let limit = cfg.scene.row_spacing / 2.0;
    let n_steps = (cl.length / (cl.gains.speed * dt)).ceil() as usize;
    let mut attitude = rng::rng(rng::derive(cfg.seed, "closed-loop-attitude"));
    let jitter = Normal::new(0.0, cfg.sensor.attitude_jitter.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let (mut x, mut y, mut yaw) = (0.0f64, cl.y0, cl.theta0);
    let mut steps = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        if y.abs() > limit {
            return Err(Error::Divergence { step: k, y, limit });
        }
        let (roll, pitch) = if cfg.sensor.attitude_jitter > 0.0 {
            (jitter.sample(&mut attitude), jitter.sample(&mut attitude))
        } else {
            (0.0, 0.0)
        };
        let pose = Pose6D::new(x, y, cfg.sensor.height, roll, pitch, yaw);
        let frame = render_frame(scene, &pose, &cfg.sensor, rng::derive_index(cfg.seed, "closed-loop-frame", k as u64));
        let pp = loc.preprocess(&frame.cloud, k);
        let est = loc
            .single(Method::TemplateUniform, pp.as_ref(), k)?
            .unwrap_or_else(|| failure_estimate(cfg.mcl.prior.covariance()));
        let omega = cl.gains.steering_rate(est.pose.y, est.pose.theta);
        steps.push(ClosedLoopStep {
            step: k,
            x,
            y,
            yaw,
            y_est: est.pose.y,
            theta_est: est.pose.theta,
            omega,
            flags: est.flags,
        });
        x += cl.gains.speed * yaw.cos() * dt;
        y += cl.gains.speed * yaw.sin() * dt;
        yaw = normalize_angle(yaw + omega * dt);
    }
    let ys: Vec<f64> = steps.iter().map(|s| s.y).collect();
    let yaws: Vec<f64> = steps.iter().map(|s| s.yaw).collect();
    let ey: Vec<f64> = steps.iter().map(|s| s.y_est - s.y).collect();
    let et: Vec<f64> = steps.iter().map(|s| normalize_angle(s.theta_est - s.yaw)).collect();
    Ok(ClosedLoopReport {
        offset: compute_metrics(&ys)?,
        heading: compute_metrics(&yaws)?,
        localization_lateral: compute_metrics(&ey)?,
        localization_heading: compute_metrics(&et)?,
        steps,
    })
}
