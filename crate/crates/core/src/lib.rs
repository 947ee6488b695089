//! OSM-guided adaptive scanning for a motorized LiDAR.
//!
//! The crate builds a lightweight prior map from OpenStreetMap footprints
//! and a terrain raster, predicts per-direction observability from a
//! panoramic depth image, drives the motor with a receding-horizon
//! controller that trades odometry uncertainty against prior utility, and
//! anchors the odometry to the prior with gated, saturated corrections.

pub mod cloud;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod mpc;
pub mod observability;
pub mod odometry;
pub mod osm_prior;
pub mod pano_depth;
pub mod scene_sim;
pub mod spatial;

pub use cloud::{CloudPoint, PointClass, WeightedCloud};
pub use error::{Error, Result};
pub use geometry::{PoseSE3, TwistSE3};
