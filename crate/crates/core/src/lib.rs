//! Depth-only knife detection, tracking and sanitization-compliance
//! pipeline for time-of-flight point clouds of a sanitation bath.

pub mod accumulator;
pub mod background;
pub mod cluster;
pub mod compliance;
pub mod config;
pub mod density;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod kdtree;
pub mod metrics;
pub mod pipeline;
pub mod scenegen;
pub mod tracker;

pub use error::{Error, Result};
pub use frames::{CameraIntrinsics, Point3, PointCloudFrame};
