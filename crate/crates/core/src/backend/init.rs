//! Bootstrapping the first window state from single-point positioning and
//! gravity alignment.

use nalgebra::{Matrix3, Matrix4, SMatrix, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::factor::Matrix17;
use crate::error::{Error, Result};
use crate::geodesy::{ecef_to_geodetic, FrameSet, OMEGA_EARTH, SPEED_OF_LIGHT};
use crate::gnss::GnssEpoch;
use crate::imu::{preintegrate_interval, ImuNoise, ImuSample, PreintegratedImu};
use crate::state::{ImuBias, NavState, IDX_BA, IDX_BG, IDX_CLOCK, IDX_DRIFT, IDX_P, IDX_THETA, IDX_V};

#[derive(Debug, Clone, PartialEq)]
pub struct SppSolution {
    pub position_ecef: Vector3<f64>,
    pub clock_bias: f64,
    /// Unit-weight covariance `(GᵀG)⁻¹` of (x, y, z, clock).
    pub covariance: Matrix4<f64>,
    pub gdop: f64,
    pub iterations: usize,
    pub residual_rms: f64,
}

/// Gauss–Newton on the pseudorange model, started at the Earth's center.
pub fn single_point_position(epoch: &GnssEpoch) -> Result<SppSolution> {
    let n = epoch.observations.len();
    if n < 4 {
        return Err(Error::InitializationDeferred(format!("{n} satellites at t = {}, need 4", epoch.timestamp)));
    }
    let k = OMEGA_EARTH / SPEED_OF_LIGHT;
    let mut p = Vector3::zeros();
    let mut clock = 0.0;
    let mut normal = Matrix4::zeros();
    let mut rms = 0.0;
    let mut iterations = 0;
    for it in 1..=30 {
        iterations = it;
        normal = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        let mut ss = 0.0;
        for (id, obs) in &epoch.observations {
            let sat = epoch.sat_states.get(id).ok_or_else(|| Error::InvalidArgument(format!("satellite {id} has no satellite state")))?;
            let s = sat.position_ecef;
            let los = s - p;
            let range = los.norm();
            let u = los / range;
            let sagnac = k * (s.x * p.y - s.y * p.x);
            let predicted = range + clock - sat.clock_error + sat.tropo_delay + sat.iono_delay + sagnac;
            let row = Vector4::new(-u.x - k * s.y, -u.y + k * s.x, -u.z, 1.0);
            let dz = obs.pseudorange - predicted;
            normal += row * row.transpose();
            rhs += row * dz;
            ss += dz * dz;
        }
        rms = (ss / n as f64).sqrt();
        let Some(inv) = normal.try_inverse() else {
            return Err(Error::DegenerateGeometry(format!("singular satellite geometry at t = {}", epoch.timestamp)));
        };
        let step = inv * rhs;
        p += step.fixed_rows::<3>(0);
        clock += step[3];
        if step.norm() < 1e-9 {
            break;
        }
    }
    let covariance = normal.try_inverse().ok_or_else(|| Error::DegenerateGeometry("singular satellite geometry".into()))?;
    Ok(SppSolution { position_ecef: p, clock_bias: clock, covariance, gdop: covariance.trace().sqrt(), iterations, residual_rms: rms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Accelerometer averaging window for gravity alignment, seconds.
    pub alignment_window: f64,
    /// Below this horizontal speed the initial yaw is left at zero.
    pub min_heading_speed: f64,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
    pub sigma_roll_pitch: f64,
    pub sigma_yaw: f64,
    pub sigma_accel_bias: f64,
    pub sigma_gyro_bias: f64,
    pub sigma_clock_bias: f64,
    pub sigma_clock_drift: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            alignment_window: 0.2,
            min_heading_speed: 0.5,
            sigma_position: 10.0,
            sigma_velocity: 2.0,
            sigma_roll_pitch: 0.2,
            sigma_yaw: std::f64::consts::PI,
            sigma_accel_bias: 0.2,
            sigma_gyro_bias: 0.02,
            sigma_clock_bias: 1e3,
            sigma_clock_drift: 1e2,
        }
    }
}

impl InitConfig {
    pub fn prior_sqrt_information(&self) -> Matrix17 {
        let mut d = SMatrix::<f64, 17, 1>::zeros();
        let mut set = |start: usize, len: usize, sigma: f64| {
            for i in start..start + len {
                d[i] = 1.0 / sigma;
            }
        };
        set(IDX_P, 3, self.sigma_position);
        set(IDX_V, 3, self.sigma_velocity);
        set(IDX_THETA, 2, self.sigma_roll_pitch);
        set(IDX_THETA + 2, 1, self.sigma_yaw);
        set(IDX_BA, 3, self.sigma_accel_bias);
        set(IDX_BG, 3, self.sigma_gyro_bias);
        set(IDX_CLOCK, 1, self.sigma_clock_bias);
        set(IDX_DRIFT, 1, self.sigma_clock_drift);
        Matrix17::from_diagonal(&d)
    }
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub state: NavState,
    pub frames: FrameSet,
    pub prior_sqrt_information: Matrix17,
    pub fixes: [SppSolution; 2],
}

/// Roll and pitch from averaged specific force, assuming negligible
/// acceleration over the window.
pub fn gravity_alignment(samples: &[ImuSample], t0: f64, window: f64) -> Result<(f64, f64)> {
    let sel: Vec<&ImuSample> = samples.iter().filter(|s| s.timestamp >= t0 - 1e-9 && s.timestamp <= t0 + window + 1e-9).collect();
    if sel.is_empty() {
        return Err(Error::InitializationDeferred(format!("no IMU samples in [{t0}, {}]", t0 + window)));
    }
    let f = sel.iter().map(|s| s.accel).sum::<Vector3<f64>>() / sel.len() as f64;
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());
    Ok((roll, pitch))
}

/// Heading and start velocity from the displacement between two fixes and
/// the IMU preintegration over the same interval, assuming no sideslip
/// (velocity along body x at the start). `level` is the roll/pitch-only
/// attitude, `antenna` the two fixes in ENU.
fn heading_and_velocity(
    level: &UnitQuaternion<f64>,
    antenna: [Vector3<f64>; 2],
    lever_arm: &Vector3<f64>,
    imu: &PreintegratedImu,
    gravity: &Vector3<f64>,
    min_speed: f64,
) -> (f64, Vector3<f64>) {
    let dt = imu.dt_total;
    let yaw_q = |yaw: f64| UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
    let mut yaw = 0.0;
    let mut speed = 0.0;
    let mut displacement = antenna[1] - antenna[0] - 0.5 * gravity * dt * dt;
    for _ in 0..5 {
        let r0 = yaw_q(yaw) * level;
        let r1 = r0 * imu.gamma;
        displacement = antenna[1] - r1 * lever_arm - (antenna[0] - r0 * lever_arm) - 0.5 * gravity * dt * dt;
        if displacement.xy().norm() < min_speed * dt {
            yaw = 0.0;
            break;
        }
        // Body-frame displacement up to yaw: level·(s·dt·x̂ + α).
        let mut w = level * (Vector3::x() * speed * dt + imu.alpha);
        for _ in 0..20 {
            let s_next = speed + (displacement.xy().norm() - w.xy().norm()) / dt;
            speed = s_next;
            w = level * (Vector3::x() * speed * dt + imu.alpha);
        }
        yaw = displacement.y.atan2(displacement.x) - w.y.atan2(w.x);
    }
    let r0 = yaw_q(yaw) * level;
    (yaw, (displacement - r0 * imu.alpha) / dt)
}

/// First window state at the time of `epochs[0]`: position and clock from
/// SPP, heading and velocity from the second fix together with the IMU
/// motion in between, roll/pitch from gravity, zero biases. The ENU origin
/// is the first antenna fix.
pub fn initialize(
    epochs: &[GnssEpoch],
    imu: &[ImuSample],
    lever_arm_gnss: Vector3<f64>,
    rotation_body_from_radar: Matrix3<f64>,
    gravity: &Vector3<f64>,
    config: &InitConfig,
) -> Result<Initialization> {
    if epochs.len() < 2 {
        return Err(Error::InitializationDeferred("need two GNSS epochs".into()));
    }
    let (e0, e1) = (&epochs[0], &epochs[1]);
    let dt = e1.timestamp - e0.timestamp;
    if !(dt > 0.0) {
        return Err(Error::NonMonotonicTime { prev: e0.timestamp, next: e1.timestamp });
    }
    let fix0 = single_point_position(e0)?;
    let fix1 = single_point_position(e1)?;
    let frames = FrameSet::new(ecef_to_geodetic(&fix0.position_ecef), lever_arm_gnss, rotation_body_from_radar)?;
    let antenna = [frames.ecef_to_enu(&fix0.position_ecef), frames.ecef_to_enu(&fix1.position_ecef)];
    let (roll, pitch) = gravity_alignment(imu, e0.timestamp, config.alignment_window)?;
    let level = UnitQuaternion::from_euler_angles(roll, pitch, 0.0);
    let motion = preintegrate_interval(imu, e0.timestamp, e1.timestamp, ImuBias::default(), ImuNoise::default())
        .map_err(|e| Error::InitializationDeferred(format!("IMU over the first two fixes: {e}")))?;
    let (yaw, velocity) = heading_and_velocity(&level, antenna, &lever_arm_gnss, &motion, gravity, config.min_heading_speed);
    let orientation = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
    let state = NavState {
        timestamp: e0.timestamp,
        position: antenna[0] - orientation * lever_arm_gnss,
        velocity,
        orientation,
        accel_bias: Vector3::zeros(),
        gyro_bias: Vector3::zeros(),
        clock_bias: fix0.clock_bias,
        clock_drift: (fix1.clock_bias - fix0.clock_bias) / dt,
    };
    Ok(Initialization { state, frames, prior_sqrt_information: config.prior_sqrt_information(), fixes: [fix0, fix1] })
}
