use std::collections::HashMap;

use super::{Box3, Point3, PointCloud};
use crate::error::{invalid, Result};

/// Keep the points inside `bbox` (inclusive), preserving order.
pub fn cutoff_filter(cloud: &PointCloud, bbox: &Box3) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().filter(|p| bbox.contains(p)).copied().collect(),
        frame: cloud.frame,
    }
}

/// Replace the points of every occupied `leaf`-sized cell by their centroid.
///
/// Cells are anchored at the frame origin (`floor(p / leaf)`), and the output is
/// sorted by cell index, so the result does not depend on input order beyond
/// floating-point summation.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(invalid(format!("downsample leaf must be positive, got {leaf}")));
    }
    let mut cells: HashMap<[i64; 3], ([f64; 3], usize)> = HashMap::with_capacity(cloud.len());
    for p in &cloud.points {
        let key = [
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        ];
        let e = cells.entry(key).or_insert(([0.0; 3], 0));
        e.0[0] += p.x;
        e.0[1] += p.y;
        e.0[2] += p.z;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    let points = cells
        .into_iter()
        .map(|(_, (s, n))| {
            let n = n as f64;
            Point3::new(s[0] / n, s[1] / n, s[2] / n)
        })
        .collect();
    Ok(PointCloud { points, frame: cloud.frame })
}
