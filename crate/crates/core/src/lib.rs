//! Place recognition for 3D LiDAR keyframes using triangle descriptors built
//! on plane-boundary keypoints.

pub mod config;
pub mod database;
pub mod descriptor;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod keypoints;
pub mod pipeline;
pub mod plane;
pub mod spatial;
pub mod synthetic;
pub mod verify;

/// Identifier of an accumulated keyframe.
pub type FrameId = u64;
