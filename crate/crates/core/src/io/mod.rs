//! Dataset, configuration and trajectory files.

pub mod config;
pub mod dataset;
pub mod trajectory;

pub use config::{AblationConfig, FramesConfig, GmmConfig, GnssConfig, NoiseModelKind, OriginPolicy, OutputPolicy, RadarConfig, RunConfig};
pub use dataset::{Dataset, GroundTruth, Record, DATASET_FILE, GROUND_TRUTH_FILE};
pub use trajectory::{Trajectory, TRAJECTORY_FILE};
