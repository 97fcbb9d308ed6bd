//! Label-efficient 3D semantic occupancy from a camera and a LiDAR.
//!
//! Semantic features come from 2D pseudo labels, geometry from a teacher and
//! student trained on few voxel annotations, and a dual-branch scan fuses both
//! into a labelled voxel grid.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod geometric;
pub mod geometry;
pub mod image;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod semantic;
pub mod semi;
pub mod synth;
pub mod taxonomy;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use semocc_tensor as tensor;
