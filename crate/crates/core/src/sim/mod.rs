//! Deterministic scenario simulator and trajectory evaluation.

pub mod eval;
pub mod generate;
pub mod scenario;

pub use eval::{evaluate, Metrics, TrajectoryPoint};
pub use generate::{generate, scenario_frames, InjectionLog, Simulation, GRAVITY};
pub use scenario::Scenario;
