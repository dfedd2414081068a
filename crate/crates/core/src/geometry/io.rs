//! Point-cloud files.
//!
//! Text form: one `x,y,z` per line (meters); lines starting with `#` and blank
//! lines are ignored. Binary form: little-endian, magic `PC3D`, `u32` count, then
//! `count × 3 × f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Frame, Point3, PointCloud};
use crate::error::{Error, Result};

pub const PC3D_MAGIC: &[u8; 4] = b"PC3D";

pub fn parse_csv(text: &str, frame: Frame) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut fields = line.split(',');
        for c in coords.iter_mut() {
            let f = fields
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: expected 3 fields", lineno + 1)))?;
            *c = f
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        if fields.next().is_some() {
            return Err(Error::Parse(format!("line {}: expected 3 fields", lineno + 1)));
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points, frame))
}

pub fn to_csv(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 24 + 8);
    s.push_str("# x,y,z\n");
    for p in &cloud.points {
        s.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
    }
    s
}

pub fn encode_binary(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(PC3D_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8], frame: Frame) -> Result<PointCloud> {
    if bytes.len() < 8 {
        return Err(Error::Parse(format!("PC3D header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != PC3D_MAGIC {
        return Err(Error::Format("expected PC3D magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != count * 12 {
        return Err(Error::DimensionMismatch(format!(
            "PC3D header declares {count} points, payload holds {} bytes",
            body.len()
        )));
    }
    let points = body
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect();
    Ok(PointCloud::new(points, frame))
}

/// Reads `.pc3d` as binary, anything else as text.
pub fn read_cloud(path: &Path, frame: Frame) -> Result<PointCloud> {
    if path.extension().is_some_and(|e| e == "pc3d") {
        decode_binary(&fs::read(path)?, frame)
    } else {
        parse_csv(&fs::read_to_string(path)?, frame)
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = fs::File::create(path)?;
    if path.extension().is_some_and(|e| e == "pc3d") {
        f.write_all(&encode_binary(cloud))?;
    } else {
        f.write_all(to_csv(cloud).as_bytes())?;
    }
    Ok(())
}
