//! Pseudorange and time-differenced carrier-phase (TDCP) models, elevation
//! masking and the receiver clock drift model.
//!
//! Ranges are evaluated as `‖S‖ + small`, with `S` the satellite position
//! relative to the ENU origin and `small` the contribution of the receiver
//! offset from that origin. At orbital distances this keeps residuals and
//! finite differences accurate far below the nanometer-level ulp problems
//! of differencing absolute ECEF coordinates.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, RowSVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{elevation_azimuth, FrameSet, OMEGA_EARTH, SPEED_OF_LIGHT};
use crate::math::skew;
use crate::state::{NavState, IDX_CLOCK, IDX_DRIFT, IDX_P, IDX_THETA, STATE_DIM};

pub type SatId = u32;

/// Row Jacobian of a scalar residual with respect to one state.
pub type ScalarJacobian = RowSVector<f64, STATE_DIM>;

/// Default elevation mask, radians (15°).
pub const DEFAULT_ELEVATION_MASK: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// BeiDou B1I carrier frequency, Hz.
pub const B1I_FREQUENCY: f64 = 1561.098e6;

pub fn b1i_wavelength() -> f64 {
    SPEED_OF_LIGHT / B1I_FREQUENCY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteObservation {
    pub sat_id: SatId,
    /// meters
    pub pseudorange: f64,
    /// cycles; `None` when the receiver lost phase lock
    pub carrier_phase: Option<f64>,
    /// Hz
    pub doppler: Option<f64>,
    /// dB-Hz
    pub snr: f64,
    /// meters
    pub wavelength: f64,
}

impl SatelliteObservation {
    pub fn validate(&self) -> Result<()> {
        if !(self.pseudorange > 1e7 && self.pseudorange < 5e7) {
            return Err(Error::InvalidArgument(format!(
                "satellite {}: pseudorange {} outside sanity window",
                self.sat_id, self.pseudorange
            )));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::InvalidArgument(format!("satellite {}: wavelength must be positive", self.sat_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteState {
    pub position_ecef: Vector3<f64>,
    /// meters
    pub clock_error: f64,
    pub tropo_delay: f64,
    pub iono_delay: f64,
}

impl SatelliteState {
    pub fn validate(&self, sat_id: SatId) -> Result<()> {
        let r = self.position_ecef.norm();
        if !(r > 2e7 && r < 5e7) {
            return Err(Error::InvalidArgument(format!("satellite {sat_id}: orbit radius {r} outside sanity window")));
        }
        if !(self.tropo_delay >= 0.0 && self.iono_delay >= 0.0) {
            return Err(Error::InvalidArgument(format!("satellite {sat_id}: negative atmospheric delay")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GnssEpoch {
    pub timestamp: f64,
    pub observations: BTreeMap<SatId, SatelliteObservation>,
    pub sat_states: BTreeMap<SatId, SatelliteState>,
}

impl GnssEpoch {
    pub fn validate(&self) -> Result<()> {
        for (id, obs) in &self.observations {
            if obs.sat_id != *id {
                return Err(Error::InvalidArgument(format!("observation keyed {id} carries sat_id {}", obs.sat_id)));
            }
            obs.validate()?;
            self.sat_states
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("satellite {id} has no satellite state")))?
                .validate(*id)?;
        }
        Ok(())
    }

    pub fn satellite_count(&self) -> usize {
        self.observations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcpMeasurement {
    pub sat_id: SatId,
    pub epoch_pair: (f64, f64),
    /// Phase change in meters with satellite clock and atmospheric changes
    /// removed, so only geometry and receiver clock remain.
    pub delta_phase: f64,
    /// `λ·(φ_{k+1} − φ_k)` as observed.
    pub raw_delta_phase: f64,
    pub accepted: bool,
}

/// Receiver antenna position expressed relative to the ENU origin, in ECEF
/// axes: `R_ne·(p + R·l)`.
pub fn antenna_offset_ecef(x: &NavState, frames: &FrameSet) -> Vector3<f64> {
    frames.rotation_ecef_from_enu * (x.position + x.orientation * frames.lever_arm_gnss)
}

/// Geometric range split as `(‖S‖, small)` with `S = p_sat − origin`.
pub fn split_range(sat_ecef: &Vector3<f64>, frames: &FrameSet, rel: &Vector3<f64>) -> (f64, f64) {
    let s = sat_ecef - frames.origin_ecef;
    let s_norm = s.norm();
    let range = (s - rel).norm();
    let small = (-2.0 * s.dot(rel) + rel.norm_squared()) / (range + s_norm);
    (s_norm, small)
}

/// Jacobian row of the range (plus Sagnac) w.r.t. the state, given the
/// derivative of the range w.r.t. the antenna ECEF position.
fn antenna_jacobian(d_range_d_rcv: &RowSVector<f64, 3>, x: &NavState, frames: &FrameSet) -> ScalarJacobian {
    let r_ne = frames.rotation_ecef_from_enu;
    let mut j = ScalarJacobian::zeros();
    j.fixed_view_mut::<1, 3>(0, IDX_P).copy_from(&(d_range_d_rcv * r_ne));
    let d_theta: Matrix3<f64> = r_ne * x.orientation.to_rotation_matrix().into_inner() * (-skew(&frames.lever_arm_gnss));
    j.fixed_view_mut::<1, 3>(0, IDX_THETA).copy_from(&(d_range_d_rcv * d_theta));
    j
}

fn unit_from_receiver(sat: &SatelliteState, frames: &FrameSet, rel: &Vector3<f64>) -> Vector3<f64> {
    let los = (sat.position_ecef - frames.origin_ecef) - rel;
    los / los.norm()
}

/// Pseudorange residual with its Jacobian w.r.t. the state.
pub fn pseudorange_residual_with_jacobian(
    obs: &SatelliteObservation,
    sat: &SatelliteState,
    x: &NavState,
    frames: &FrameSet,
) -> (f64, ScalarJacobian) {
    let rel = antenna_offset_ecef(x, frames);
    let (s_norm, small) = split_range(&sat.position_ecef, frames, &rel);
    let rcv = frames.origin_ecef + rel;
    let sagnac = OMEGA_EARTH / SPEED_OF_LIGHT * (sat.position_ecef.x * rcv.y - sat.position_ecef.y * rcv.x);
    let r = ((s_norm - obs.pseudorange) - sat.clock_error + sat.tropo_delay + sat.iono_delay) + sagnac + small + x.clock_bias;

    let u = unit_from_receiver(sat, frames, &rel);
    let k = OMEGA_EARTH / SPEED_OF_LIGHT;
    let d_rcv = RowSVector::<f64, 3>::new(-u.x - k * sat.position_ecef.y, -u.y + k * sat.position_ecef.x, -u.z);
    let mut j = antenna_jacobian(&d_rcv, x, frames);
    j[IDX_CLOCK] = 1.0;
    (r, j)
}

/// `‖p_s − p_r‖ + δt − δt_s + δρ_tropo + δρ_iono + δ_sagnac − ρ`.
pub fn pseudorange_residual(obs: &SatelliteObservation, sat: &SatelliteState, x: &NavState, frames: &FrameSet) -> f64 {
    pseudorange_residual_with_jacobian(obs, sat, x, frames).0
}

/// Drops observations below `mask` elevation as seen from `receiver_ecef`.
pub fn elevation_filter(epoch: &GnssEpoch, receiver_ecef: &Vector3<f64>, mask: f64) -> GnssEpoch {
    let mut out = GnssEpoch { timestamp: epoch.timestamp, ..Default::default() };
    for (id, obs) in &epoch.observations {
        let Some(sat) = epoch.sat_states.get(id) else { continue };
        match elevation_azimuth(&sat.position_ecef, receiver_ecef) {
            Ok((el, _)) if el >= mask => {
                out.observations.insert(*id, *obs);
                out.sat_states.insert(*id, *sat);
            }
            _ => {}
        }
    }
    out
}

/// One TDCP candidate per satellite with carrier phase at both epochs.
/// Acceptance is left to the cycle-slip check.
pub fn build_tdcp(epoch_k: &GnssEpoch, epoch_k1: &GnssEpoch) -> Vec<TdcpMeasurement> {
    let mut out = Vec::new();
    for (id, obs1) in &epoch_k1.observations {
        let Some(obs0) = epoch_k.observations.get(id) else { continue };
        let (Some(phi0), Some(phi1)) = (obs0.carrier_phase, obs1.carrier_phase) else { continue };
        let (Some(s0), Some(s1)) = (epoch_k.sat_states.get(id), epoch_k1.sat_states.get(id)) else { continue };
        let raw = obs1.wavelength * (phi1 - phi0);
        let corrections = (s1.clock_error - s0.clock_error) - (s1.tropo_delay - s0.tropo_delay) + (s1.iono_delay - s0.iono_delay);
        out.push(TdcpMeasurement {
            sat_id: *id,
            epoch_pair: (epoch_k.timestamp, epoch_k1.timestamp),
            delta_phase: raw + corrections,
            raw_delta_phase: raw,
            accepted: false,
        });
    }
    out
}

/// TDCP residual with Jacobians w.r.t. both states. Unaccepted measurements
/// are refused.
pub fn tdcp_residual_with_jacobian(
    m: &TdcpMeasurement,
    sats: (&SatelliteState, &SatelliteState),
    x_k: &NavState,
    x_k1: &NavState,
    frames: &FrameSet,
) -> Result<(f64, ScalarJacobian, ScalarJacobian)> {
    if !m.accepted {
        return Err(Error::UnacceptedTdcp(format!("satellite {} at t = {}", m.sat_id, m.epoch_pair.1)));
    }
    let rel0 = antenna_offset_ecef(x_k, frames);
    let rel1 = antenna_offset_ecef(x_k1, frames);
    let (n0, small0) = split_range(&sats.0.position_ecef, frames, &rel0);
    let (n1, small1) = split_range(&sats.1.position_ecef, frames, &rel1);
    let r = ((n1 - n0) - m.delta_phase) + (small1 - small0) + (x_k1.clock_bias - x_k.clock_bias);

    let u0 = unit_from_receiver(sats.0, frames, &rel0);
    let u1 = unit_from_receiver(sats.1, frames, &rel1);
    let mut j0 = antenna_jacobian(&(u0.transpose()), x_k, frames);
    j0[IDX_CLOCK] = -1.0;
    let mut j1 = antenna_jacobian(&(-u1.transpose()), x_k1, frames);
    j1[IDX_CLOCK] = 1.0;
    Ok((r, j0, j1))
}

/// `‖p_s,k+1 − p_r,k+1‖ − ‖p_s,k − p_r,k‖ + δt_{k+1} − δt_k − Δφ`.
pub fn tdcp_residual(
    m: &TdcpMeasurement,
    sats: (&SatelliteState, &SatelliteState),
    x_k: &NavState,
    x_k1: &NavState,
    frames: &FrameSet,
) -> Result<f64> {
    tdcp_residual_with_jacobian(m, sats, x_k, x_k1, frames).map(|t| t.0)
}

/// Constant clock drift model residual
/// `(δt_k + δṫ_k·Δt − δt_{k+1}, δṫ_k − δṫ_{k+1})` with Jacobians.
pub fn clock_drift_residual_with_jacobian(
    x_k: &NavState,
    x_k1: &NavState,
    dt: f64,
) -> (Vector2<f64>, nalgebra::SMatrix<f64, 2, STATE_DIM>, nalgebra::SMatrix<f64, 2, STATE_DIM>) {
    let r = Vector2::new(
        x_k.clock_bias + x_k.clock_drift * dt - x_k1.clock_bias,
        x_k.clock_drift - x_k1.clock_drift,
    );
    let mut j0 = nalgebra::SMatrix::<f64, 2, STATE_DIM>::zeros();
    j0[(0, IDX_CLOCK)] = 1.0;
    j0[(0, IDX_DRIFT)] = dt;
    j0[(1, IDX_DRIFT)] = 1.0;
    let mut j1 = nalgebra::SMatrix::<f64, 2, STATE_DIM>::zeros();
    j1[(0, IDX_CLOCK)] = -1.0;
    j1[(1, IDX_DRIFT)] = -1.0;
    (r, j0, j1)
}

pub fn clock_drift_residual(x_k: &NavState, x_k1: &NavState, dt: f64) -> Result<Vector2<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("clock drift interval {dt} must be positive")));
    }
    Ok(clock_drift_residual_with_jacobian(x_k, x_k1, dt).0)
}
