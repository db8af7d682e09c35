//! Point-cloud metrology for shaft-hole docking.
//!
//! The crate covers the whole measurement chain: cloud I/O and frame
//! handling, statistical outlier removal, principal-axis projection,
//! seed-anchored DBSCAN, Hough fitting of the bolt thread helix, RANSAC
//! segmentation of mating faces and hole axes, and the docking pose search
//! over the face and hole deviation indices. [`synth`] generates labeled
//! scenes with exact ground truth for every stage.

pub mod cloud;
pub mod cluster;
pub mod error;
pub mod fit;
pub mod helix;
pub mod io;
pub mod optim;
pub mod pca;
pub mod pipeline;
pub mod pose;
pub mod preprocess;
pub mod segment;
pub mod spatial;
pub mod synth;

pub use cloud::{Frame, Point3, PointCloud, RigidTransform};
pub use error::{Error, Result};
