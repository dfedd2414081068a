//! Coordinate frames, rigid transforms and the point-cloud preprocessing chain
//! (downsample, frame transfer, ground plane, cutoff box).
//!
//! Frames: `{C}` camera, `{V}` vehicle, `{T}` template (on the centerline, at the
//! vehicle's along-row station, aligned with the row), `{R}` row. Rotations use
//! the Z·Y·X convention everywhere: roll about x first, then pitch about y, then
//! yaw about z.

mod filter;
pub mod io;
mod ransac;

pub use filter::{cutoff_filter, voxel_downsample};
pub use ransac::{preprocess, ransac_ground_plane, GroundEstimate, Preprocessed, PreprocessConfig, RansacConfig};

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Point3 = nalgebra::Point3<f64>;

/// Coordinate frame tag carried by a [`PointCloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Camera,
    Vehicle,
    Template,
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self { points: Vec::new(), frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn all_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
    }
}

/// Wrap an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Vehicle state in the row frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6D {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        }
    }

    /// Transform mapping vehicle coordinates into the row frame.
    pub fn to_transform(&self) -> RigidTransform {
        let mut t = rotation_from_euler(self.roll, self.pitch, self.yaw);
        t.translation = Vector3::new(self.x, self.y, self.z);
        t
    }
}

/// Rotation plus translation, `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Inverse transform: `Rᵀ (p − t)`.
    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Orthonormality and handedness within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        orth < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Largest absolute entry difference between the two 3×4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`, zero translation.
pub fn rotation_from_euler(roll: f64, pitch: f64, yaw: f64) -> RigidTransform {
    RigidTransform {
        rotation: rot_z(yaw) * rot_y(pitch) * rot_x(roll),
        translation: Vector3::zeros(),
    }
}

/// Pose of the vehicle in the template frame: rotation from (roll, pitch, yaw),
/// translation `[0, y, z]`. Applying it maps `{V}` points into `{T}`; its inverse
/// maps `{T}` back into `{V}`. The x-translation is zero because `{T}` shares the
/// vehicle's along-row station.
pub fn make_pose_transform(pose: &Pose6D) -> RigidTransform {
    let mut t = rotation_from_euler(pose.roll, pose.pitch, pose.yaw);
    t.translation = Vector3::new(0.0, pose.y, pose.z);
    t
}

/// Map every point through `t`. The frame tag is left for the caller to set.
pub fn transform_cloud(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        frame: cloud.frame,
    }
}

/// Plane `normal · p = offset` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `normal`; rejects zero or non-finite normals.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Option<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0 && offset.is_finite()) {
            return None;
        }
        Some(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    #[inline]
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Axis-aligned box, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> crate::Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> crate::Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite()) || self.min[a] > self.max[a] {
                return Err(crate::error::invalid(format!(
                    "box axis {a}: min {} > max {}",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min[0]
            && p.x <= self.max[0]
            && p.y >= self.min[1]
            && p.y <= self.max[1]
            && p.z >= self.min[2]
            && p.z <= self.max[2]
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// The default evaluation cutoff: x∈[0,20], y∈[−5,5], z∈[0,4] m.
    pub fn evaluation_default() -> Self {
        Self {
            min: [0.0, -5.0, 0.0],
            max: [20.0, 5.0, 4.0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Unit, UnitQuaternion};
    use proptest::prelude::*;

    fn quaternion_oracle(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
        let qx = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::x()), roll);
        let qy = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::y()), pitch);
        let qz = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::z()), yaw);
        (qz * qy * qx).to_rotation_matrix().into_inner()
    }

    #[test]
    fn euler_identity_and_quarter_turn() {
        assert_eq!(rotation_from_euler(0.0, 0.0, 0.0).rotation, Matrix3::identity());
        let r = rotation_from_euler(0.0, 0.0, PI / 2.0);
        let v = r.rotation * Vector3::x();
        assert!((v - Vector3::y()).amax() < 1e-15);
    }

    #[test]
    fn euler_matches_quaternion_composition() {
        let r = rotation_from_euler(0.1, 0.2, 0.3);
        assert!(r.is_valid(1e-9));
        assert!((r.rotation - quaternion_oracle(0.1, 0.2, 0.3)).amax() < 1e-12);
    }

    #[test]
    fn pose_transform_examples() {
        assert_eq!(make_pose_transform(&Pose6D::default()), RigidTransform::identity());
        let t = make_pose_transform(&Pose6D::new(3.0, 0.5, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::new(0.0, 0.5, 0.0));

        let t = make_pose_transform(&Pose6D::new(0.0, 0.2, 0.0, 0.0, 0.0, 0.1));
        let p = Point3::new(4.0, -1.0, 0.3);
        let back = t.invert().apply(&t.apply(&p));
        assert!((back - p).amax() < 1e-9);
    }

    #[test]
    fn transform_examples() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0), Point3::origin()], Frame::Vehicle);
        assert_eq!(transform_cloud(&RigidTransform::identity(), &cloud), cloud);
        let t = RigidTransform::from_translation(Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(t.apply(&Point3::origin()), Point3::new(0.0, 1.0, 0.0));
        assert_eq!(t.invert().translation, Vector3::new(0.0, -1.0, 0.0));
        assert_eq!(RigidTransform::identity().invert(), RigidTransform::identity());
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(
            r in -PI..PI, p in -PI..PI, y in -PI..PI,
            tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -50.0..50.0f64,
        ) {
            let mut t = rotation_from_euler(r, p, y);
            t.translation = Vector3::new(tx, ty, tz);
            prop_assert!(t.is_valid(1e-9));
            prop_assert!(t.invert().compose(&t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
            prop_assert!(t.compose(&t.invert()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        }

        #[test]
        fn cloud_round_trip(
            r in -PI..PI, p in -PI..PI, y in -PI..PI,
            pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64), 0..50),
        ) {
            let mut t = rotation_from_euler(r, p, y);
            t.translation = Vector3::new(1.0, -2.0, 0.5);
            let cloud = PointCloud::new(pts.iter().map(|&(a, b, c)| Point3::new(a, b, c)).collect(), Frame::Vehicle);
            let back = transform_cloud(&t.invert(), &transform_cloud(&t, &cloud));
            for (a, b) in back.points.iter().zip(&cloud.points) {
                prop_assert!((a - b).amax() < 1e-9);
            }
        }
    }
}
