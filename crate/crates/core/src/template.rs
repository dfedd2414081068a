//! Row-sensing template: a dense voxel grid over `{T}` holding, per voxel, the
//! fraction of template-building frames in which the voxel contained at least
//! one measured point.
//!
//! Voxels whose centers lie outside `row_range` hold `no_info_frequency`. Grid
//! order is x-major: `index = (ix * ny + iy) * nz + iz`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    cutoff_filter, make_pose_transform, preprocess, transform_cloud, Box3, Frame, Point3, PointCloud, Pose6D,
    PreprocessConfig,
};

/// How a frame contributes to a voxel's count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Counting {
    /// At most one increment per voxel per frame; values stay in [0, 1].
    #[default]
    PerFrame,
    /// One increment per point; kept for comparison, values may exceed 1.
    PerPoint,
}

/// Default out-of-row fill. Low enough that moving canopy points out of the
/// in-row region is never as good as matching them.
pub const DEFAULT_NO_INFO_FREQUENCY: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Cubic voxel edge, meters.
    pub resolution: f64,
    pub template_range: Box3,
    pub row_range: Box3,
    /// Fill for voxels outside `row_range`. `None` derives it from the built
    /// grid: mean frequency of occupied in-row voxels, clamped to [0.01, 0.5].
    pub no_info_frequency: Option<f64>,
    pub counting: Counting,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self::for_row_spacing(3.0)
    }
}

impl TemplateConfig {
    /// 0.1 m voxels over x∈[0,20], y∈[−5,5], z∈[0,4], in-row region ±spacing/2.
    pub fn for_row_spacing(row_spacing: f64) -> Self {
        let half = (row_spacing / 2.0).min(5.0);
        Self {
            resolution: 0.1,
            template_range: Box3::evaluation_default(),
            row_range: Box3 {
                min: [0.0, -half, 0.0],
                max: [20.0, half, 4.0],
            },
            no_info_frequency: Some(DEFAULT_NO_INFO_FREQUENCY),
            counting: Counting::PerFrame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(invalid(format!("template resolution must be positive, got {}", self.resolution)));
        }
        self.template_range.validate()?;
        self.row_range.validate()?;
        if !self.template_range.contains_box(&self.row_range) {
            return Err(invalid("row_range must lie inside template_range"));
        }
        if let Some(f) = self.no_info_frequency {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("no_info_frequency must be in [0,1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        grid_dims(&self.template_range, self.resolution)
    }
}

/// `ceil(extent / resolution)` per axis, at least 1. The small slack keeps exact
/// multiples (20 m / 0.1 m) from rounding up an extra cell.
pub fn grid_dims(range: &Box3, resolution: f64) -> [usize; 3] {
    let d = |a: usize| ((range.extent(a) / resolution - 1e-9).ceil() as usize).max(1);
    [d(0), d(1), d(2)]
}

/// Known lateral offset and heading of `{V}` relative to the centerline for one
/// template-building frame. Attitude and height default to the ground-plane fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundTruthPose {
    pub y: f64,
    pub yaw: f64,
    pub roll: Option<f64>,
    pub pitch: Option<f64>,
    pub z: Option<f64>,
}

impl GroundTruthPose {
    pub fn new(y: f64, yaw: f64) -> Self {
        Self { y, yaw, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    resolution: f64,
    template_range: Box3,
    row_range: Box3,
    no_info_frequency: f64,
    n_frames: u32,
    dims: [usize; 3],
    grid: Vec<f32>,
}

impl Template {
    /// Assemble from raw parts, checking that the grid matches the extent.
    pub fn from_parts(
        resolution: f64,
        template_range: Box3,
        row_range: Box3,
        no_info_frequency: f64,
        n_frames: u32,
        grid: Vec<f32>,
    ) -> Result<Self> {
        let cfg = TemplateConfig {
            resolution,
            template_range,
            row_range,
            no_info_frequency: Some(no_info_frequency),
            counting: Counting::PerFrame,
        };
        cfg.validate()?;
        let dims = cfg.dims();
        if grid.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::DimensionMismatch(format!(
                "grid holds {} voxels, extent implies {}×{}×{}",
                grid.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self {
            resolution,
            template_range,
            row_range,
            no_info_frequency,
            n_frames,
            dims,
            grid,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn template_range(&self) -> &Box3 {
        &self.template_range
    }
    pub fn row_range(&self) -> &Box3 {
        &self.row_range
    }
    pub fn no_info_frequency(&self) -> f64 {
        self.no_info_frequency
    }
    pub fn n_frames(&self) -> u32 {
        self.n_frames
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn grid(&self) -> &[f32] {
        &self.grid
    }
    pub fn voxel_count(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    /// `floor((v − min) / resolution)` on one axis; `None` outside the range,
    /// upper-boundary values clamp into the last voxel.
    #[inline]
    pub fn axis_index(&self, axis: usize, v: f64) -> Option<usize> {
        let lo = self.template_range.min[axis];
        if !(v >= lo && v <= self.template_range.max[axis]) {
            return None;
        }
        let i = ((v - lo) / self.resolution).floor() as usize;
        Some(i.min(self.dims[axis] - 1))
    }

    #[inline]
    pub fn voxel_index(&self, p: &Point3) -> Option<usize> {
        Some(self.flat_index(self.axis_index(0, p.x)?, self.axis_index(1, p.y)?, self.axis_index(2, p.z)?))
    }

    /// Occupancy frequency at `p` (in `{T}`); `no_info_frequency` outside the grid.
    pub fn lookup(&self, p: &Point3) -> f64 {
        match self.voxel_index(p) {
            Some(i) => self.grid[i] as f64,
            None => self.no_info_frequency,
        }
    }

    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        let c = |a: usize, i: usize| self.template_range.min[a] + (i as f64 + 0.5) * self.resolution;
        Point3::new(c(0, ix), c(1, iy), c(2, iz))
    }

    /// Per-axis flags: voxel center inside `row_range`.
    fn in_row_axes(&self) -> [Vec<bool>; 3] {
        in_row_axes(&self.template_range, &self.row_range, self.resolution, self.dims)
    }

    /// Iterate `(flat_index, in_row)` over the grid.
    pub fn in_row_mask(&self) -> Vec<bool> {
        let axes = self.in_row_axes();
        let mut mask = vec![false; self.grid.len()];
        for ix in 0..self.dims[0] {
            for iy in 0..self.dims[1] {
                for iz in 0..self.dims[2] {
                    mask[self.flat_index(ix, iy, iz)] = axes[0][ix] && axes[1][iy] && axes[2][iz];
                }
            }
        }
        mask
    }
}

fn in_row_axes(range: &Box3, row: &Box3, res: f64, dims: [usize; 3]) -> [Vec<bool>; 3] {
    let axis = |a: usize| {
        (0..dims[a])
            .map(|i| {
                let c = range.min[a] + (i as f64 + 0.5) * res;
                c >= row.min[a] && c <= row.max[a]
            })
            .collect::<Vec<_>>()
    };
    [axis(0), axis(1), axis(2)]
}

/// Build a template from measurements with known lateral offset and heading.
///
/// Each frame is preprocessed, placed in `{T}` with the ground-plane attitude and
/// height plus the known `(y, yaw)`, cut to `row_range`, and counted into the
/// grid. Counts are divided by the number of frames; voxels outside the row get
/// the no-info fill.
pub fn build_template(
    clouds_c: &[PointCloud],
    truths: &[GroundTruthPose],
    cfg: &TemplateConfig,
    pre: &PreprocessConfig,
) -> Result<Template> {
    cfg.validate()?;
    if clouds_c.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: clouds_c.len(),
            right: truths.len(),
        });
    }
    if clouds_c.is_empty() {
        return Err(Error::EmptyInput("template needs at least one frame".into()));
    }

    let dims = cfg.dims();
    let axes = in_row_axes(&cfg.template_range, &cfg.row_range, cfg.resolution, dims);
    let shell = Template {
        resolution: cfg.resolution,
        template_range: cfg.template_range,
        row_range: cfg.row_range,
        no_info_frequency: 0.0,
        n_frames: clouds_c.len() as u32,
        dims,
        grid: Vec::new(),
    };

    let mut counts: HashMap<usize, u32> = HashMap::new();
    let mut frame_voxels: Vec<usize> = Vec::new();
    for (t, (cloud, truth)) in clouds_c.iter().zip(truths).enumerate() {
        let mut frame_pre = pre.clone();
        frame_pre.seed = crate::rng::derive_index(pre.seed, "template-frame", t as u64);
        let prep = preprocess(cloud, &frame_pre)?;
        let pose = Pose6D::new(
            0.0,
            truth.y,
            truth.z.unwrap_or(prep.ground.height),
            truth.roll.unwrap_or(prep.ground.roll),
            truth.pitch.unwrap_or(prep.ground.pitch),
            truth.yaw,
        );
        let in_t = transform_cloud(&make_pose_transform(&pose), &prep.cloud).with_frame(Frame::Template);
        let in_row = cutoff_filter(&in_t, &cfg.row_range);

        frame_voxels.clear();
        for p in &in_row.points {
            let (Some(ix), Some(iy), Some(iz)) =
                (shell.axis_index(0, p.x), shell.axis_index(1, p.y), shell.axis_index(2, p.z))
            else {
                continue;
            };
            if axes[0][ix] && axes[1][iy] && axes[2][iz] {
                frame_voxels.push(shell.flat_index(ix, iy, iz));
            }
        }
        if cfg.counting == Counting::PerFrame {
            frame_voxels.sort_unstable();
            frame_voxels.dedup();
        }
        for &v in &frame_voxels {
            *counts.entry(v).or_insert(0) += 1;
        }
    }

    let n = clouds_c.len() as f64;
    let no_info = match cfg.no_info_frequency {
        Some(f) => f,
        None if counts.is_empty() => 0.01,
        None => {
            let mut keys: Vec<_> = counts.iter().collect();
            keys.sort_unstable();
            let mean = keys.iter().map(|(_, &c)| c as f64 / n).sum::<f64>() / keys.len() as f64;
            mean.clamp(0.01, 0.5)
        }
    };

    let mut grid = vec![no_info as f32; dims[0] * dims[1] * dims[2]];
    for ix in (0..dims[0]).filter(|&i| axes[0][i]) {
        for iy in (0..dims[1]).filter(|&i| axes[1][i]) {
            for iz in (0..dims[2]).filter(|&i| axes[2][i]) {
                grid[shell.flat_index(ix, iy, iz)] = 0.0;
            }
        }
    }
    for (&v, &c) in &counts {
        grid[v] = (c as f64 / n) as f32;
    }
    if cfg.counting == Counting::PerFrame {
        assert!(
            counts.values().all(|&c| c as usize <= clouds_c.len()),
            "per-frame counting produced a frequency above 1"
        );
    }

    Ok(Template {
        no_info_frequency: no_info,
        grid,
        ..shell
    })
}

pub const TEMPLATE_MAGIC: &[u8; 4] = b"RSTP";
pub const TEMPLATE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 48 + 48 + 8 + 4 + 12;

impl Template {
    /// Size in bytes of the serialized template.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.grid.len()
    }

    /// Little-endian: magic, version, resolution, template_range (min xyz, max
    /// xyz), row_range, no_info_frequency, n_frames, dims, then f32 grid.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(TEMPLATE_MAGIC);
        out.extend_from_slice(&TEMPLATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.resolution.to_le_bytes());
        for b in [&self.template_range, &self.row_range] {
            for v in b.min.iter().chain(&b.max) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.no_info_frequency.to_le_bytes());
        out.extend_from_slice(&self.n_frames.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.grid {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Parse(format!(
                "template header truncated: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != TEMPLATE_MAGIC {
            return Err(Error::Format("expected RSTP magic".into()));
        }
        let mut at = 4;
        let u32_at = |at: &mut usize| {
            let v = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap());
            *at += 4;
            v
        };
        let version = u32_at(&mut at);
        if version != TEMPLATE_VERSION {
            return Err(Error::Format(format!("unsupported template version {version}")));
        }
        let f64_at = |at: &mut usize| {
            let v = f64::from_le_bytes(bytes[*at..*at + 8].try_into().unwrap());
            *at += 8;
            v
        };
        let resolution = f64_at(&mut at);
        let read_box = |at: &mut usize| {
            let mut v = [0.0; 6];
            for x in v.iter_mut() {
                *x = f64_at(at);
            }
            Box3 {
                min: [v[0], v[1], v[2]],
                max: [v[3], v[4], v[5]],
            }
        };
        let template_range = read_box(&mut at);
        let row_range = read_box(&mut at);
        let no_info = f64_at(&mut at);
        let u32_at = |at: &mut usize| {
            let v = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap());
            *at += 4;
            v
        };
        let n_frames = u32_at(&mut at);
        let dims = [u32_at(&mut at), u32_at(&mut at), u32_at(&mut at)].map(|d| d as usize);

        let cfg = TemplateConfig {
            resolution,
            template_range,
            row_range,
            no_info_frequency: Some(no_info),
            counting: Counting::PerFrame,
        };
        cfg.validate()?;
        let expected = cfg.dims();
        if dims != expected {
            return Err(Error::DimensionMismatch(format!(
                "header dims {dims:?} disagree with extent/resolution {expected:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < 4 * n {
            return Err(Error::Parse(format!(
                "template payload truncated: {} of {} bytes",
                payload.len(),
                4 * n
            )));
        }
        if payload.len() != 4 * n {
            return Err(Error::DimensionMismatch(format!(
                "payload holds {} bytes, dims {dims:?} need {}",
                payload.len(),
                4 * n
            )));
        }
        let grid = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Template::from_parts(resolution, template_range, row_range, no_info, n_frames, grid)
    }
}

pub fn save_template(template: &Template, path: &Path) -> Result<()> {
    fs::write(path, template.encode())?;
    Ok(())
}

pub fn load_template(path: &Path) -> Result<Template> {
    Template::decode(&fs::read(path)?)
}
