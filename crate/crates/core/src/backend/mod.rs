//! Sliding-window factor graph: factors, Levenberg–Marquardt optimization,
//! marginalization and bootstrapping.

pub mod factor;
pub mod init;
pub mod lm;
pub mod marginalization;
pub mod problem;

pub use factor::{Factor, FactorKind, PseudorangeNoise, StateId};
pub use init::{initialize, single_point_position, InitConfig, Initialization, SppSolution};
pub use lm::{ConvergenceReport, LmConfig, Termination};
pub use problem::{EpochInputs, FactorNoise, Problem};
