//! Outlier handling: Doppler-integrated cycle-slip detection and the
//! Gaussian-mixture pseudorange noise model.

pub mod cycle_slip;
pub mod gmm;

pub use cycle_slip::{detect_cycle_slip, detect_cycle_slip_signed, CycleSlipCheck, DEFAULT_SLIP_THRESHOLD};
pub use gmm::{fit_gmm, fit_single, gmm_cost, select_noise_model, GmmFit, GmmNoiseModel, ModelSelection, VARIANCE_FLOOR};
