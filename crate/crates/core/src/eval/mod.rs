//! Closed-loop experiments over simulated scenes and trajectory evaluation.

mod ape;
mod compare;
mod pipeline;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::mpc::MpcConfig;
use crate::observability::ObservabilityConfig;
use crate::odometry::OdometryConfig;
use crate::osm_prior::{GeoOrigin, PriorConfig};
use crate::pano_depth::PanoConfig;
use crate::scene_sim::LidarModel;

pub use ape::{compute_ape, TrajectoryErrorReport};
pub use compare::{compare_strategies, compare_with_results, Comparison, StrategyReport};
pub use pipeline::{
    load_inputs, run_experiment, ControllerRow, ExperimentInputs, ExperimentResult, FusionRow,
};

/// Motor scanning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Motor held at its initial angle.
    Static,
    /// Fixed speed (rad/s), bypassing the controller.
    Constant(f64),
    /// Receding-horizon control over the observability scores.
    Adaptive,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Static => f.write_str("static"),
            Strategy::Constant(w) => write!(f, "constant:{w}"),
            Strategy::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "static" => Ok(Strategy::Static),
            "adaptive" => Ok(Strategy::Adaptive),
            other => {
                let w = other
                    .strip_prefix("constant:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{other}`")))?;
                let w: f64 = w.parse().map_err(|_| {
                    Error::InvalidArgument(format!("strategy `{other}`: bad speed"))
                })?;
                if !w.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "strategy `{other}`: speed must be finite"
                    )));
                }
                Ok(Strategy::Constant(w))
            }
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Builtin scene name; ignored when `scene_file` is set.
    pub scene: String,
    /// Scene triangles written by `Scene::write_text`.
    pub scene_file: Option<PathBuf>,
    /// Ground truth; required with `scene_file`.
    pub trajectory_file: Option<PathBuf>,
    /// Footprints; required with `scene_file`.
    pub osm_file: Option<PathBuf>,
    /// Terrain; required with `scene_file`.
    pub dem_file: Option<PathBuf>,
    pub origin: GeoOrigin,
    pub strategy: Strategy,
    /// Motor angle at the first frame (rad); the static strategy holds it.
    /// The default looks sideways, at the street frontage.
    pub initial_theta: f64,
    /// Fraction of footprints removed from the prior.
    pub osm_dropout: f64,
    pub seed: u64,
    /// Truncates the trajectory to this many frames.
    pub max_frames: Option<usize>,
    /// Frames between score table rebuilds.
    pub control_period: usize,
    /// Radius of the prior crop used for the panorama (m).
    pub prior_radius: f64,
    /// Prior alignment and drift correction on/off.
    pub fusion_enabled: bool,
    pub lidar: LidarModel,
    pub prior: PriorConfig,
    pub pano: PanoConfig,
    pub observability: ObservabilityConfig,
    pub mpc: MpcConfig,
    pub odometry: OdometryConfig,
    pub fusion: FusionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: "campus".into(),
            scene_file: None,
            trajectory_file: None,
            osm_file: None,
            dem_file: None,
            origin: GeoOrigin::default(),
            strategy: Strategy::Adaptive,
            initial_theta: std::f64::consts::FRAC_PI_2,
            osm_dropout: 0.0,
            seed: 0,
            max_frames: None,
            control_period: 5,
            prior_radius: 40.0,
            fusion_enabled: true,
            lidar: LidarModel::default(),
            prior: PriorConfig::default(),
            pano: PanoConfig::default(),
            observability: ObservabilityConfig::default(),
            mpc: MpcConfig::default(),
            odometry: OdometryConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.osm_dropout) {
            return Err(Error::InvalidArgument(format!(
                "osm dropout {} outside [0, 1)",
                self.osm_dropout
            )));
        }
        if !self.initial_theta.is_finite() {
            return Err(Error::InvalidArgument(
                "initial motor angle must be finite".into(),
            ));
        }
        if self.control_period == 0 || !(self.prior_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "control period and prior radius must be positive".into(),
            ));
        }
        if let Strategy::Constant(w) = self.strategy {
            if w < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "constant speed {w} must be non-negative"
                )));
            }
        }
        if self.scene_file.is_some()
            && (self.trajectory_file.is_none()
                || self.osm_file.is_none()
                || self.dem_file.is_none())
        {
            return Err(Error::InvalidArgument(
                "scene_file requires trajectory_file, osm_file and dem_file".into(),
            ));
        }
        self.lidar
            .validate()
            .map_err(|e| e.in_module("scene_sim"))?;
        self.mpc.validate().map_err(|e| e.in_module("mpc"))?;
        self.fusion.validate().map_err(|e| e.in_module("fusion"))?;
        Ok(())
    }
}
