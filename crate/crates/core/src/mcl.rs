//! Monte Carlo search over `(y, θ)`: uniform sampling from a prior box and an
//! odometry-informed particle filter, with maximum-likelihood selection and a
//! confidence covariance taken from the highest-scoring particles.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measurement::{LikelihoodModel, LogLikelihood, PoseProposal, PreparedScan};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub y_min: f64,
    pub y_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for UniformPrior {
    fn default() -> Self {
        Self {
            y_min: -0.8,
            y_max: 0.8,
            theta_min: -0.6,
            theta_max: 0.6,
        }
    }
}

impl UniformPrior {
    /// Intervals may be degenerate (`min == max`), which pins that coordinate.
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64, b: f64| a.is_finite() && b.is_finite() && a <= b;
        if !(ok(self.y_min, self.y_max) && ok(self.theta_min, self.theta_max)) {
            return Err(invalid(format!("invalid uniform prior {self:?}")));
        }
        Ok(())
    }

    /// Diagonal covariance of the prior itself.
    pub fn covariance(&self) -> Matrix2<f64> {
        let v = |a: f64, b: f64| (b - a).powi(2) / 12.0;
        Matrix2::new(v(self.y_min, self.y_max), 0.0, 0.0, v(self.theta_min, self.theta_max))
    }

    fn draw(&self, rng: &mut Rng) -> PoseProposal {
        let u = |rng: &mut Rng, a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let y = u(rng, self.y_min, self.y_max);
        PoseProposal::new(y, u(rng, self.theta_min, self.theta_max))
    }
}

pub fn sample_uniform(prior: &UniformPrior, n: usize, seed: u64) -> Result<Vec<PoseProposal>> {
    prior.validate()?;
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut rng = rng::rng(seed);
    Ok((0..n).map(|_| prior.draw(&mut rng)).collect())
}

/// Vehicle-frame increment `(Δx, Δy, Δθ)` and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub cov: Matrix3<f64>,
}

impl OdometryDelta {
    pub fn new(dx: f64, dy: f64, dtheta: f64, cov: Matrix3<f64>) -> Self {
        Self { dx, dy, dtheta, cov }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, Matrix3::zeros())
    }

    /// Factor for drawing `N(0, Σ)`; fails if `Σ` is not symmetric PSD.
    pub fn noise(&self) -> Result<GaussianNoise> {
        GaussianNoise::new(&self.cov)
    }
}

/// Default odometry covariance per frame: diag(0.02², 0.02², 0.01²).
pub fn default_odometry_cov() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(0.02f64.powi(2), 0.02f64.powi(2), 0.01f64.powi(2)))
}

/// Zero-mean Gaussian in 3D drawn as `V·√Λ·z`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNoise {
    factor: Matrix3<f64>,
    zero: bool,
}

impl GaussianNoise {
    pub fn new(cov: &Matrix3<f64>) -> Result<Self> {
        if !cov.iter().all(|v| v.is_finite()) || (cov - cov.transpose()).amax() > 1e-12 {
            return Err(invalid("odometry covariance must be finite and symmetric"));
        }
        let eig = SymmetricEigen::new(*cov);
        let scale = cov.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
            return Err(invalid("odometry covariance is not positive semidefinite"));
        }
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(Self {
            factor: eig.eigenvectors * Matrix3::from_diagonal(&sqrt),
            zero: cov.iter().all(|&v| v == 0.0),
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> Vector3<f64> {
        if self.zero {
            return Vector3::zeros();
        }
        let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        self.factor * z
    }
}

/// Move `prev` by the increment (lateral part `Δx·sinθ + Δy·cosθ`, heading
/// `Δθ`), then add the `(y, θ)` part of a `N(0, Σ)` draw.
pub fn propagate(u: &OdometryDelta, noise: &GaussianNoise, prev: PoseProposal, rng: &mut Rng) -> PoseProposal {
    let (s, c) = prev.theta.sin_cos();
    let e = noise.sample(rng);
    PoseProposal::new(
        prev.y + u.dx * s + u.dy * c + e.y,
        prev.theta + u.dtheta + e.z,
    )
}

pub fn sample_motion_model(u: &OdometryDelta, prev: PoseProposal, seed: u64) -> Result<PoseProposal> {
    let noise = u.noise()?;
    Ok(propagate(u, &noise, prev, &mut rng::rng(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: PoseProposal,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub rng_seed: u64,
}

impl ParticleSet {
    /// Equal-weight particles drawn from `prior`.
    pub fn from_prior(prior: &UniformPrior, n: usize, seed: u64) -> Result<Self> {
        let poses = sample_uniform(prior, n, rng::derive(seed, "prior"))?;
        Ok(Self::from_poses(poses, seed))
    }

    pub fn from_poses(poses: Vec<PoseProposal>, seed: u64) -> Self {
        let w = 1.0 / poses.len().max(1) as f64;
        Self {
            particles: poses.into_iter().map(|pose| Particle { pose, weight: w }).collect(),
            rng_seed: seed,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers into
/// the cumulative weights. Output weights are `1/n`.
pub fn resample(set: &ParticleSet, seed: u64) -> Result<ParticleSet> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyInput("cannot resample an empty particle set".into()));
    }
    let total: f64 = set.particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0 && total.is_finite()) || set.particles.iter().any(|p| p.weight < 0.0) {
        return Err(invalid(format!("resampling needs positive finite total weight, got {total}")));
    }
    let step = total / n as f64;
    let mut pointer = rng::rng(seed).random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = set.particles[0].weight;
    let mut k = 0;
    for _ in 0..n {
        while pointer > cum && k + 1 < n {
            k += 1;
            cum += set.particles[k].weight;
        }
        out.push(Particle {
            pose: set.particles[k].pose,
            weight: 1.0 / n as f64,
        });
        pointer += step;
    }
    Ok(ParticleSet {
        particles: out,
        rng_seed: set.rng_seed,
    })
}

/// Unweighted second moment about `best` of the `ceil(fraction·n)` particles
/// with the highest weights (stable on ties), over `(y, θ)`.
pub fn covariance_top_fraction(particles: &[Particle], best: PoseProposal, fraction: f64) -> Matrix2<f64> {
    let keys: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    top_moment(particles.iter().map(|p| p.pose).collect::<Vec<_>>().as_slice(), &keys, best, fraction)
}

fn top_indices<K: PartialOrd + Copy>(keys: &[K], fraction: f64) -> Vec<usize> {
    let m = ((fraction * keys.len() as f64).ceil() as usize).clamp(1, keys.len().max(1));
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(m);
    idx
}

fn top_moment<K: PartialOrd + Copy>(poses: &[PoseProposal], keys: &[K], best: PoseProposal, fraction: f64) -> Matrix2<f64> {
    if poses.is_empty() {
        return Matrix2::zeros();
    }
    let idx = top_indices(keys, fraction);
    let mut m = Matrix2::zeros();
    for &i in &idx {
        let d = nalgebra::Vector2::new(poses[i].y - best.y, poses[i].theta - best.theta);
        m += d * d.transpose();
    }
    m / idx.len() as f64
}

pub mod flags {
    pub const LOW_CONFIDENCE: u8 = 1;
    pub const EMPTY: u8 = 2;
    pub const REINITIALIZED: u8 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: PoseProposal,
    pub covariance: Matrix2<f64>,
    pub std_y: f64,
    pub std_theta: f64,
    /// Log-likelihood of the selected proposal.
    pub loglik: f64,
    pub flags: u8,
}

impl PoseEstimate {
    pub fn new(pose: PoseProposal, covariance: Matrix2<f64>, loglik: f64, flags: u8) -> Self {
        Self {
            pose,
            covariance,
            std_y: covariance[(0, 0)].max(0.0).sqrt(),
            std_theta: covariance[(1, 1)].max(0.0).sqrt(),
            loglik,
            flags,
        }
    }

    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Selection {
    #[default]
    Argmax,
    WeightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MclConfig {
    pub n_particles: usize,
    pub prior: UniformPrior,
    pub top_fraction: f64,
    pub selection: Selection,
    /// A frame is low-confidence when either std exceeds its limit.
    pub low_confidence_std_y: f64,
    pub low_confidence_std_theta: f64,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            n_particles: 5000,
            prior: UniformPrior::default(),
            top_fraction: 0.01,
            selection: Selection::Argmax,
            low_confidence_std_y: 0.3,
            low_confidence_std_theta: 0.05,
        }
    }
}

impl MclConfig {
    fn confidence_flags(&self, cov: &Matrix2<f64>) -> u8 {
        if cov[(0, 0)].sqrt() > self.low_confidence_std_y || cov[(1, 1)].sqrt() > self.low_confidence_std_theta {
            flags::LOW_CONFIDENCE
        } else {
            0
        }
    }
}

/// Lowest index among the maximal raw scores.
fn argmax(scores: &[LogLikelihood]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.raw() > scores[best].raw() {
            best = i;
        }
    }
    best
}

/// Every scored point fell on the probability floor, so the scores carry no
/// information about the pose.
fn collapsed(best: &LogLikelihood, model: &LikelihoodModel) -> bool {
    best.n_points_scored > 0 && best.value <= best.n_points_scored as f64 * model.floor_log() + 1e-6
}

/// Relative weights `exp(ll − max)`.
fn weights(scores: &[LogLikelihood], best: &LogLikelihood) -> Vec<f64> {
    scores.iter().map(|s| (s.value - best.value).exp()).collect()
}

fn select(poses: &[PoseProposal], scores: &[LogLikelihood], best: usize, selection: Selection) -> PoseProposal {
    match selection {
        Selection::Argmax => poses[best],
        Selection::WeightedMean => {
            let w = weights(scores, &scores[best]);
            let total: f64 = w.iter().sum();
            let (y, t) = poses
                .iter()
                .zip(&w)
                .fold((0.0, 0.0), |(y, t), (p, &wi)| (y + wi * p.y, t + wi * p.theta));
            PoseProposal::new(y / total, t / total)
        }
    }
}

/// Score `proposals` and return the best with its top-fraction covariance.
pub fn estimate_from_proposals(
    scan: &PreparedScan,
    model: &LikelihoodModel,
    proposals: &[PoseProposal],
    cfg: &MclConfig,
) -> (PoseEstimate, Vec<LogLikelihood>) {
    let scores = scan.score_all(model, proposals);
    let b = argmax(&scores);
    if scores[b].empty {
        let est = PoseEstimate::new(proposals[b], cfg.prior.covariance(), 0.0, flags::EMPTY | flags::LOW_CONFIDENCE);
        return (est, scores);
    }
    let pose = select(proposals, &scores, b, cfg.selection);
    let raws: Vec<i64> = scores.iter().map(|s| s.raw()).collect();
    let cov = top_moment(proposals, &raws, pose, cfg.top_fraction);
    let mut f = cfg.confidence_flags(&cov);
    if collapsed(&scores[b], model) {
        f |= flags::LOW_CONFIDENCE;
    }
    (PoseEstimate::new(pose, cov, scores[b].value, f), scores)
}

/// Uniform sampling: `n` proposals from the prior, maximum-likelihood pick.
pub fn localize_uniform(
    scan: &PreparedScan,
    model: &LikelihoodModel,
    prior: &UniformPrior,
    n: usize,
    seed: u64,
    cfg: &MclConfig,
) -> Result<PoseEstimate> {
    let proposals = sample_uniform(prior, n, seed)?;
    let cfg = MclConfig {
        prior: *prior,
        ..cfg.clone()
    };
    Ok(estimate_from_proposals(scan, model, &proposals, &cfg).0)
}

/// One particle-filter step: motion update, measurement weighting, best pick
/// and covariance, then systematic resampling. When every particle scores on
/// the floor the set is redrawn from the prior and the frame is flagged.
pub fn localize_pf(
    scan: &PreparedScan,
    prev: &ParticleSet,
    u: &OdometryDelta,
    model: &LikelihoodModel,
    cfg: &MclConfig,
) -> Result<(PoseEstimate, ParticleSet)> {
    if prev.is_empty() {
        return Err(Error::EmptyInput("particle filter needs at least one particle".into()));
    }
    let noise = u.noise()?;
    let mut motion_rng = rng::rng(rng::derive(prev.rng_seed, "motion"));
    let poses: Vec<PoseProposal> = prev
        .particles
        .iter()
        .map(|p| propagate(u, &noise, p.pose, &mut motion_rng))
        .collect();
    let (mut est, scores) = estimate_from_proposals(scan, model, &poses, cfg);
    let next_seed = rng::derive(prev.rng_seed, "next");
    if est.has(flags::EMPTY) {
        // No evidence: keep the predicted particles.
        return Ok((est, ParticleSet::from_poses(poses, next_seed)));
    }
    let b = argmax(&scores);
    if collapsed(&scores[b], model) {
        est.flags |= flags::REINITIALIZED | flags::LOW_CONFIDENCE;
        let set = ParticleSet::from_prior(&cfg.prior, prev.len(), next_seed)?;
        return Ok((est, set));
    }
    let w = weights(&scores, &scores[b]);
    let weighted = ParticleSet {
        particles: poses.into_iter().zip(w).map(|(pose, weight)| Particle { pose, weight }).collect(),
        rng_seed: next_seed,
    };
    let next = resample(&weighted, rng::derive(prev.rng_seed, "resample"))?;
    Ok((est, next))
}

/// Per-frame estimate log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub frame: usize,
    pub estimate: PoseEstimate,
    pub truth: Option<PoseProposal>,
}

pub const ESTIMATE_CSV_HEADER: &str = "frame,y_est,theta_est,std_y,std_theta,loglik,flags,y_true,theta_true";

impl EstimateRecord {
    pub fn csv_row(&self) -> String {
        let e = &self.estimate;
        let (yt, tt) = match self.truth {
            Some(t) => (t.y.to_string(), t.theta.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.frame, e.pose.y, e.pose.theta, e.std_y, e.std_theta, e.loglik, e.flags, yt, tt
        )
    }
}

pub fn estimates_to_csv(records: &[EstimateRecord]) -> String {
    let mut s = String::from(ESTIMATE_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_prior_pins_the_sample() {
        let p = UniformPrior {
            y_min: 0.25,
            y_max: 0.25,
            theta_min: -0.1,
            theta_max: -0.1,
        };
        assert_eq!(sample_uniform(&p, 1, 3).unwrap(), vec![PoseProposal::new(0.25, -0.1)]);
        assert!(sample_uniform(&p, 0, 3).is_err());
        let bad = UniformPrior { y_min: 1.0, ..p };
        assert!(sample_uniform(&bad, 1, 3).is_err());
    }

    #[test]
    fn uniform_sample_mean_and_determinism() {
        let n = 100_000;
        let prior = UniformPrior::default();
        let s = sample_uniform(&prior, n, 42).unwrap();
        assert_eq!(s, sample_uniform(&prior, n, 42).unwrap());
        let my = s.iter().map(|p| p.y).sum::<f64>() / n as f64;
        let mt = s.iter().map(|p| p.theta).sum::<f64>() / n as f64;
        // Uniform on [a,b] has σ = (b−a)/√12.
        assert!(my.abs() < 3.0 * (1.6 / 12f64.sqrt()) / (n as f64).sqrt());
        assert!(mt.abs() < 3.0 * (1.2 / 12f64.sqrt()) / (n as f64).sqrt());
        assert!(s.iter().all(|p| p.y.abs() <= 0.8 && p.theta.abs() <= 0.6));
    }

    #[test]
    fn noiseless_motion() {
        let prev = PoseProposal::new(0.3, 0.0);
        assert_eq!(sample_motion_model(&OdometryDelta::zero(), prev, 1).unwrap(), prev);
        let u = OdometryDelta::new(1.0, 0.0, 0.1, Matrix3::zeros());
        assert_eq!(sample_motion_model(&u, prev, 1).unwrap(), PoseProposal::new(0.3, 0.1));
        // Heading 0.2 and a 1 m forward step drift y by sin 0.2.
        let u = OdometryDelta::new(1.0, 0.0, 0.0, Matrix3::zeros());
        let p = sample_motion_model(&u, PoseProposal::new(0.0, 0.2), 1).unwrap();
        assert!((p.y - 0.2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn motion_noise_covariance() {
        let cov = Matrix3::from_diagonal(&Vector3::new(0.01f64.powi(2), 0.01f64.powi(2), 0.005f64.powi(2)));
        let u = OdometryDelta::new(0.0, 0.0, 0.0, cov);
        let noise = u.noise().unwrap();
        let mut rng = rng::rng(7);
        let n = 100_000;
        let s: Vec<PoseProposal> = (0..n).map(|_| propagate(&u, &noise, PoseProposal::default(), &mut rng)).collect();
        let var = |f: &dyn Fn(&PoseProposal) -> f64| s.iter().map(|p| f(p).powi(2)).sum::<f64>() / n as f64;
        let vy = var(&|p| p.y);
        let vt = var(&|p| p.theta);
        let cyt = s.iter().map(|p| p.y * p.theta).sum::<f64>() / n as f64;
        assert!((vy / 1e-4 - 1.0).abs() < 0.1, "{vy}");
        assert!((vt / 2.5e-5 - 1.0).abs() < 0.1, "{vt}");
        assert!(cyt.abs() < 0.1 * (1e-4f64 * 2.5e-5).sqrt());
    }

    #[test]
    fn correlated_noise_covariance() {
        let cov = Matrix3::new(4e-4, 1e-4, 0.0, 1e-4, 4e-4, 1e-4, 0.0, 1e-4, 1e-4);
        let noise = GaussianNoise::new(&cov).unwrap();
        let mut rng = rng::rng(8);
        let n = 100_000;
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            let e = noise.sample(&mut rng);
            acc += e * e.transpose();
        }
        acc /= n as f64;
        assert!((acc - cov).amax() < 0.1 * 4e-4, "{acc}");
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1e-4, -1e-4, 1e-4));
        assert!(GaussianNoise::new(&cov).is_err());
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(GaussianNoise::new(&asym).is_err());
    }

    fn set(weights: &[f64]) -> ParticleSet {
        ParticleSet {
            particles: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| Particle {
                    pose: PoseProposal::new(i as f64, 0.0),
                    weight: w,
                })
                .collect(),
            rng_seed: 0,
        }
    }

    #[test]
    fn resample_equal_weights_keeps_every_particle() {
        for seed in 0..20 {
            let s = set(&[0.25; 8]);
            let r = resample(&s, seed).unwrap();
            let ys: Vec<f64> = r.particles.iter().map(|p| p.pose.y).collect();
            assert_eq!(ys, (0..8).map(|i| i as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn resample_single_holder_and_errors() {
        let r = resample(&set(&[0.0, 1.0, 0.0, 0.0]), 3).unwrap();
        assert!(r.particles.iter().all(|p| p.pose.y == 1.0 && p.weight == 0.25));
        assert!(resample(&set(&[0.0, 0.0]), 3).is_err());
        assert!(resample(&set(&[]), 3).is_err());
    }

    #[test]
    fn resample_frequencies_match_weights() {
        let n = 100_000;
        // Three poses with weights 0.5/0.3/0.2, spread over n particles in random
        // order (a periodic layout would alias with the systematic comb).
        let mut rng = rng::rng(10);
        let class: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut per_class = [0usize; 3];
        for &c in &class {
            per_class[c] += 1;
        }
        let w: Vec<f64> = class.iter().map(|&c| [0.5, 0.3, 0.2][c] / per_class[c] as f64).collect();
        let r = resample(&set(&w), 11).unwrap();
        assert_eq!(r.len(), n);
        let mut counts = [0usize; 3];
        for p in &r.particles {
            counts[class[p.pose.y as usize]] += 1;
        }
        for (k, target) in [0.5, 0.3, 0.2].iter().enumerate() {
            let f = counts[k] as f64 / n as f64;
            assert!((f - target).abs() < 0.01, "class {k}: {f}");
        }
    }

    #[test]
    fn top_fraction_moments() {
        let best = PoseProposal::new(0.1, 0.2);
        let same: Vec<Particle> = (0..100).map(|_| Particle { pose: best, weight: 1.0 }).collect();
        assert_eq!(covariance_top_fraction(&same, best, 0.01), Matrix2::zeros());

        let d = 0.05;
        let mut ps: Vec<Particle> = (0..200)
            .map(|i| Particle {
                pose: PoseProposal::new(5.0, 5.0),
                weight: i as f64 * 1e-3,
            })
            .collect();
        ps[10] = Particle {
            pose: PoseProposal::new(best.y + d, best.theta),
            weight: 10.0,
        };
        ps[20] = Particle {
            pose: PoseProposal::new(best.y - d, best.theta),
            weight: 10.0,
        };
        // ceil(0.01·200) = 2 picks exactly the two heavy particles.
        let m = covariance_top_fraction(&ps, best, 0.01);
        assert!((m[(0, 0)] - d * d).abs() < 1e-15);
        assert_eq!(m[(1, 1)], 0.0);
        // Scaling weights leaves the selection unchanged.
        let scaled: Vec<Particle> = ps.iter().map(|p| Particle { weight: p.weight * 37.0, ..*p }).collect();
        assert_eq!(covariance_top_fraction(&scaled, best, 0.01), m);
    }

    #[test]
    fn csv_row_format() {
        let est = PoseEstimate::new(PoseProposal::new(0.5, -0.25), Matrix2::new(0.04, 0.0, 0.0, 0.01), -12.5, flags::LOW_CONFIDENCE);
        let r = EstimateRecord {
            frame: 3,
            estimate: est,
            truth: Some(PoseProposal::new(0.4, -0.2)),
        };
        assert_eq!(r.csv_row(), "3,0.5,-0.25,0.2,0.1,-12.5,1,0.4,-0.2");
        let r = EstimateRecord { truth: None, ..r };
        assert!(estimates_to_csv(&[r]).ends_with("3,0.5,-0.25,0.2,0.1,-12.5,1,,\n"));
    }
}
