//! Localization of a ground vehicle relative to the centerline of an orchard or
//! vineyard row from 3D point clouds, using a voxel occupancy-frequency template
//! as a likelihood field and Monte Carlo search over lateral offset and heading.
//!
//! Also contains a synthetic orchard generator, two line-fitting baselines and
//! the experiment harness used to evaluate them.

pub mod baselines;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod synth;
pub mod mcl;
pub mod measurement;
pub mod template;

pub use error::{Error, Result};
pub use geometry::{Box3, Frame, Point3, PointCloud, Pose6D, RigidTransform};
pub use template::{build_template, load_template, save_template, GroundTruthPose, Template, TemplateConfig};
