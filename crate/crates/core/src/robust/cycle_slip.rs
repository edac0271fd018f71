use serde::Serialize;

/// Default detection threshold, meters.
pub const DEFAULT_SLIP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleSlipCheck {
    /// meters; NaN when the check could not be evaluated
    pub epsilon: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CycleSlipCheck {
    fn failed(threshold: f64) -> Self {
        Self { epsilon: f64::NAN, threshold, passed: false }
    }
}

/// Compares the phase change with the trapezoidal integral of Doppler,
/// `ε = |λ·Δφ − λ·(D_k + D_{k+1})/2·Δt|`. Missing Doppler, or a
/// non-positive interval, fails closed.
pub fn detect_cycle_slip(
    phi_k: f64,
    phi_k1: f64,
    doppler_k: Option<f64>,
    doppler_k1: Option<f64>,
    wavelength: f64,
    dt: f64,
    threshold: f64,
) -> CycleSlipCheck {
    detect_cycle_slip_signed(phi_k, phi_k1, doppler_k, doppler_k1, wavelength, dt, threshold, 1.0)
}

/// As [`detect_cycle_slip`], with `doppler_sign = -1` for receivers that
/// report Doppler as the negative phase rate.
#[allow(clippy::too_many_arguments)]
pub fn detect_cycle_slip_signed(
    phi_k: f64,
    phi_k1: f64,
    doppler_k: Option<f64>,
    doppler_k1: Option<f64>,
    wavelength: f64,
    dt: f64,
    threshold: f64,
    doppler_sign: f64,
) -> CycleSlipCheck {
    let (Some(d0), Some(d1)) = (doppler_k, doppler_k1) else {
        return CycleSlipCheck::failed(threshold);
    };
    if !(dt > 0.0) || !(wavelength > 0.0) {
        return CycleSlipCheck::failed(threshold);
    }
    let delta_phase = wavelength * (phi_k1 - phi_k);
    let integrated = wavelength * doppler_sign * 0.5 * (d0 + d1) * dt;
    let epsilon = (delta_phase - integrated).abs();
    CycleSlipCheck { epsilon, threshold, passed: epsilon < threshold }
}
