//! Auto-labeling of oriented 3D boxes from single-view metric depth and
//! per-instance 2D masks.
//!
//! The labeling path: erode masks ([`morphology`]), unproject to
//! pseudo-LiDAR ([`camera`]), fit the ground and level the cloud
//! ([`ground`]), estimate yaw and fit a tight box ([`boxes`]), then gate the
//! box against class priors and search corner-anchored proposals when it is
//! implausible ([`search`]). [`scene`] renders synthetic cuboid scenes with
//! exact ground truth, and [`eval`] scores labels with IoU₃D-based mAP.
//!
//! Geometry kernels are generic over [`Real`]; the aliases below fix them to
//! `f64`, which is what the pipeline, renderer and evaluator use.

pub mod ablate;
pub mod boxes;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod formats;
pub mod ground;
pub mod labels;
pub mod linalg;
pub mod morphology;
pub mod pipeline;
pub mod priors;
pub mod scalar;
pub mod scene;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3 = linalg::Vec3<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type CameraIntrinsics = camera::CameraIntrinsics<f64>;
pub type DepthMap = camera::DepthMap<f64>;
pub type PointCloud = camera::PointCloud<f64>;
pub type GroundPlane = ground::GroundPlane<f64>;
pub type GroundAlignedFrame = ground::GroundAlignedFrame<f64>;
pub type OrientedBox3D = boxes::OrientedBox3<f64>;
pub type Bev = boxes::Bev<f64>;
