//! Tightly coupled GNSS / IMU / 4D-radar localization on a sliding-window
//! factor graph.

pub mod backend;
pub mod error;
pub mod geodesy;
pub mod gnss;
pub mod imu;
pub mod io;
pub mod math;
pub mod pipeline;
pub mod radar;
pub mod robust;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
