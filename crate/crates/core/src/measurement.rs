//! Template-based sensor model: log-probability of a point cloud given a
//! proposed lateral offset and heading.
//!
//! A frame is preprocessed once ([`PreparedScan`]); scoring a proposal is then a
//! rotation about z, a shift in y and one table read per point. Per-voxel log
//! probabilities are stored in fixed point (2⁻²⁴ nats) and summed in integers,
//! so a score does not depend on point order or on how the sum is split across
//! threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{preprocess, Box3, GroundEstimate, PointCloud, PreprocessConfig, Preprocessed};
use crate::template::Template;

/// Default probability floor applied to every table read.
pub const DEFAULT_P_FLOOR: f64 = 1e-4;

const FIXED_SCALE: f64 = (1u64 << 24) as f64;

#[inline]
fn to_fixed(v: f64) -> i32 {
    (v * FIXED_SCALE).round() as i32
}

/// Lateral offset and heading of `{V}` relative to the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseProposal {
    pub y: f64,
    pub theta: f64,
}

impl PoseProposal {
    pub fn new(y: f64, theta: f64) -> Self {
        Self { y, theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    /// Sum of floored natural-log probabilities; 0 for an empty cloud.
    pub value: f64,
    pub n_points_scored: usize,
    /// No point survived the cutoff.
    pub empty: bool,
    raw: i64,
}

impl LogLikelihood {
    /// Mean log-probability per scored point, for comparing clouds of different size.
    pub fn mean(&self) -> f64 {
        if self.n_points_scored == 0 {
            0.0
        } else {
            self.value / self.n_points_scored as f64
        }
    }

    /// Exact fixed-point sum, for tie-free comparisons.
    pub fn raw(&self) -> i64 {
        self.raw
    }
}

/// A template turned into a table of floored log probabilities.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    table: Vec<i32>,
    no_info: i32,
    p_floor: f64,
    min: [f64; 3],
    max: [f64; 3],
    inv_res: f64,
    /// `dims - 1` per axis, as floats.
    last: [f64; 3],
    dims: [usize; 3],
}

impl LikelihoodModel {
    pub fn new(template: &Template, p_floor: f64) -> Result<Self> {
        if !(1e-50..=1.0).contains(&p_floor) {
            return Err(invalid(format!("p_floor must be in [1e-50, 1], got {p_floor}")));
        }
        let log = |v: f64| to_fixed(v.max(p_floor).ln());
        let table = template.grid().par_iter().map(|&v| log(v as f64)).collect();
        Ok(Self {
            table,
            no_info: log(template.no_info_frequency()),
            p_floor,
            min: template.template_range().min,
            max: template.template_range().max,
            inv_res: 1.0 / template.resolution(),
            last: template.dims().map(|d| (d - 1) as f64),
            dims: template.dims(),
        })
    }

    pub fn p_floor(&self) -> f64 {
        self.p_floor
    }

    /// `ln(p_floor)` as the model applies it.
    pub fn floor_log(&self) -> f64 {
        to_fixed(self.p_floor.ln()) as f64 / FIXED_SCALE
    }

    #[inline(always)]
    fn term(&self, x: f64, y: f64, z: f64) -> i32 {
        let inside = (x >= self.min[0])
            & (x <= self.max[0])
            & (y >= self.min[1])
            & (y <= self.max[1])
            & (z >= self.min[2])
            & (z <= self.max[2]);
        // Clamping first makes the conversions total: NaN maps to 0 and the
        // upper boundary lands in the last voxel.
        let cell = |a: usize, v: f64| -> usize {
            let f = ((v - self.min[a]) * self.inv_res).max(0.0).min(self.last[a]);
            // SAFETY: f is finite and in [0, dims[a] - 1].
            unsafe { f.to_int_unchecked::<u32>() as usize }
        };
        let i = (cell(0, x) * self.dims[1] + cell(1, y)) * self.dims[2] + cell(2, z);
        // SAFETY: every cell index is below its dimension and the table has
        // dims[0] * dims[1] * dims[2] entries.
        let v = unsafe { *self.table.get_unchecked(i) };
        if inside { v } else { self.no_info }
    }
}

/// A preprocessed frame, leveled and lifted to ground height, ready to score
/// against any proposal.
///
/// The cutoff box is applied once here, in the leveled frame with zero offset
/// and heading, so every proposal scores the same set of points. Points that a
/// proposal moves outside the template read the no-information frequency.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    xy: Vec<[f64; 2]>,
    z: Vec<f64>,
    cutoff: Box3,
    ground: GroundEstimate,
}

impl PreparedScan {
    pub fn new(cloud_c: &PointCloud, cutoff: &Box3, pre: &PreprocessConfig) -> Result<Self> {
        Ok(Self::from_preprocessed(&preprocess(cloud_c, pre)?, cutoff))
    }

    pub fn from_preprocessed(pre: &Preprocessed, cutoff: &Box3) -> Self {
        let level = pre.ground.leveling();
        let h = pre.ground.height;
        let mut kept: Vec<[f64; 3]> = Vec::with_capacity(pre.cloud.len());
        for p in &pre.cloud.points {
            let q = level * p.coords;
            let zt = q.z + h;
            if cutoff.contains(&crate::geometry::Point3::new(q.x, q.y, zt)) {
                kept.push([q.x, q.y, zt]);
            }
        }
        // Spatial order keeps consecutive table reads close in memory.
        let key = |p: &[f64; 3]| ((p[0] * 4.0).floor() as i64, (p[1] * 4.0).floor() as i64);
        kept.sort_by(|a, b| key(a).cmp(&key(b)).then(a[2].total_cmp(&b[2])));
        let xy = kept.iter().map(|p| [p[0], p[1]]).collect();
        let z = kept.iter().map(|p| p[2]).collect();
        Self {
            xy,
            z,
            cutoff: *cutoff,
            ground: pre.ground,
        }
    }

    /// A scan with no points, for frames whose preprocessing failed.
    pub fn empty() -> Self {
        Self {
            xy: Vec::new(),
            z: Vec::new(),
            cutoff: Box3::evaluation_default(),
            ground: GroundEstimate {
                plane: crate::geometry::Plane::new(nalgebra::Vector3::z(), 0.0).expect("unit normal"),
                roll: 0.0,
                pitch: 0.0,
                height: 0.0,
                inlier_ratio: 0.0,
            },
        }
    }

    pub fn cutoff(&self) -> &Box3 {
        &self.cutoff
    }

    pub fn ground(&self) -> &GroundEstimate {
        &self.ground
    }

    /// Points inside the cutoff box.
    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    pub fn score(&self, model: &LikelihoodModel, proposal: PoseProposal) -> LogLikelihood {
        let (s, c) = proposal.theta.sin_cos();
        let mut raw = 0i64;
        for (&[qx, qy], &zt) in self.xy.iter().zip(&self.z) {
            let xt = c * qx - s * qy;
            let yt = s * qx + c * qy + proposal.y;
            raw += model.term(xt, yt, zt) as i64;
        }
        let n = self.xy.len();
        LogLikelihood {
            value: raw as f64 / FIXED_SCALE,
            n_points_scored: n,
            empty: n == 0,
            raw,
        }
    }

    /// Score many proposals in parallel; output order follows input order.
    pub fn score_all(&self, model: &LikelihoodModel, proposals: &[PoseProposal]) -> Vec<LogLikelihood> {
        proposals.par_iter().with_min_len(64).map(|&p| self.score(model, p)).collect()
    }
}

/// One-shot evaluation: preprocess, place with `proposal`, cut to `cutoff` and
/// sum floored log probabilities.
pub fn measurement_log_likelihood(
    cloud_c: &PointCloud,
    template: &Template,
    proposal: PoseProposal,
    cutoff: &Box3,
    pre: &PreprocessConfig,
    p_floor: f64,
) -> Result<LogLikelihood> {
    let model = LikelihoodModel::new(template, p_floor)?;
    Ok(PreparedScan::new(cloud_c, cutoff, pre)?.score(&model, proposal))
}

/// Inclusive evenly spaced nodes `start, start + step, …` up to `stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    pub fn nodes(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(invalid(format!("empty grid axis {self:?}")));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

/// Log-likelihood over a `(θ, y)` grid; `values[i][j]` is at `(ys[j], thetas[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodField {
    pub ys: Vec<f64>,
    pub thetas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl LikelihoodField {
    /// Node of the maximum (first in row-major order on ties).
    pub fn argmax(&self) -> PoseProposal {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        PoseProposal::new(self.ys[best.2], self.thetas[best.1])
    }

    /// Rows are θ nodes, columns y nodes; the first row and column hold node values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta\\y");
        for y in &self.ys {
            write!(s, ",{y}").unwrap();
        }
        s.push('\n');
        for (t, row) in self.thetas.iter().zip(&self.values) {
            write!(s, "{t}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

pub fn likelihood_field(scan: &PreparedScan, model: &LikelihoodModel, ys: &GridAxis, thetas: &GridAxis) -> Result<LikelihoodField> {
    let ys = ys.nodes()?;
    let thetas = thetas.nodes()?;
    let values = thetas
        .par_iter()
        .map(|&t| ys.iter().map(|&y| scan.score(model, PoseProposal::new(y, t)).value).collect())
        .collect();
    Ok(LikelihoodField { ys, thetas, values })
}
