//! 4D-radar ego-velocity estimation and velocity preintegration.
//!
//! Each static reflector constrains the radar velocity along its line of
//! sight. A RANSAC consensus over two-point minimal solutions separates
//! static points from moving targets; the final 2-D velocity is the least
//! squares fit over the consensus set. Only the resulting longitudinal body
//! velocity is kept.

use nalgebra::{Matrix2, Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::PreintegratedImu;
use crate::math::skew;
use crate::state::{NavState, IDX_P, IDX_THETA, STATE_DIM};

/// Points closer than this are discarded before estimation, meters.
pub const MIN_POINT_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    /// Radar frame, meters.
    pub position: Vector3<f64>,
    /// Relative radial speed, m/s.
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarScan {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub min_points: usize,
    /// m/s
    pub inlier_threshold: f64,
    pub min_consensus_fraction: f64,
    pub iterations: usize,
    pub early_exit_fraction: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            min_points: 8,
            inlier_threshold: 0.25,
            min_consensus_fraction: 0.4,
            iterations: 100,
            early_exit_fraction: 0.95,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoVelocityEstimate {
    /// (v_x, v_y) in the radar frame.
    pub v2d_radar: Vector2<f64>,
    /// Longitudinal-only body velocity `[v_x, 0, 0]`.
    pub body_velocity: Vector3<f64>,
    pub inlier_indices: Vec<usize>,
    pub residual_rms: f64,
    pub valid: bool,
}

impl EgoVelocityEstimate {
    fn invalid() -> Self {
        Self {
            v2d_radar: Vector2::zeros(),
            body_velocity: Vector3::zeros(),
            inlier_indices: Vec::new(),
            residual_rms: f64::NAN,
            valid: false,
        }
    }
}

fn direction(p: &RadarPoint) -> Vector2<f64> {
    let d = p.position / p.position.norm();
    Vector2::new(d.x, d.y)
}

fn least_squares(dirs: &[Vector2<f64>], dopplers: &[f64], idx: &[usize]) -> Option<Vector2<f64>> {
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for &i in idx {
        ata += dirs[i] * dirs[i].transpose();
        atb += dirs[i] * dopplers[i];
    }
    if ata.determinant().abs() < 1e-9 * (1.0 + ata.norm_squared()) {
        return None;
    }
    ata.try_inverse().map(|inv| inv * atb)
}

fn consensus(dirs: &[Vector2<f64>], dopplers: &[f64], v: &Vector2<f64>, threshold: f64) -> Vec<usize> {
    (0..dirs.len()).filter(|&i| (dirs[i].dot(v) - dopplers[i]).abs() < threshold).collect()
}

/// RANSAC + least-squares ego velocity from one Doppler point cloud.
/// Too few usable points yield an invalid estimate rather than an error.
pub fn estimate_ego_velocity(
    points: &[RadarPoint],
    config: &RansacConfig,
    rotation_body_from_radar: &Matrix3<f64>,
) -> EgoVelocityEstimate {
    let usable: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].position.norm() > MIN_POINT_RANGE && points[i].doppler.is_finite())
        .collect();
    if usable.len() < config.min_points.max(2) {
        return EgoVelocityEstimate::invalid();
    }
    let dirs: Vec<Vector2<f64>> = usable.iter().map(|&i| direction(&points[i])).collect();
    let dopplers: Vec<f64> = usable.iter().map(|&i| points[i].doppler).collect();
    let n = dirs.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..config.iterations {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let m = Matrix2::from_rows(&[dirs[a].transpose(), dirs[b].transpose()]);
        if m.determinant().abs() < 1e-6 {
            continue;
        }
        let Some(v) = m.try_inverse().map(|inv| inv * Vector2::new(dopplers[a], dopplers[b])) else {
            continue;
        };
        let set = consensus(&dirs, &dopplers, &v, config.inlier_threshold);
        if set.len() > best.len() {
            best = set;
            if best.len() as f64 >= config.early_exit_fraction * n as f64 {
                break;
            }
        }
    }
    if best.len() < 2 {
        return EgoVelocityEstimate::invalid();
    }

    // Refit over the consensus, then refresh the consensus from the refit.
    let mut v = match least_squares(&dirs, &dopplers, &best) {
        Some(v) => v,
        None => return EgoVelocityEstimate::invalid(),
    };
    for _ in 0..3 {
        let set = consensus(&dirs, &dopplers, &v, config.inlier_threshold);
        if set == best || set.len() < 2 {
            break;
        }
        match least_squares(&dirs, &dopplers, &set) {
            Some(nv) => {
                v = nv;
                best = set;
            }
            None => break,
        }
    }

    let rms = (best.iter().map(|&i| (dirs[i].dot(&v) - dopplers[i]).powi(2)).sum::<f64>() / best.len() as f64).sqrt();
    let fraction = best.len() as f64 / n as f64;
    let longitudinal = (rotation_body_from_radar * Vector3::new(v.x, v.y, 0.0)).x;
    EgoVelocityEstimate {
        v2d_radar: v,
        body_velocity: Vector3::new(longitudinal, 0.0, 0.0),
        inlier_indices: best.iter().map(|&i| usable[i]).collect(),
        residual_rms: rms,
        valid: best.len() >= config.min_points && fraction >= config.min_consensus_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarVelocityNoise {
    /// Per-sample velocity noise, m/s.
    pub sigma_v: f64,
    /// Decorrelation time of the velocity error, seconds (radar period).
    pub correlation_time: f64,
}

impl Default for RadarVelocityNoise {
    fn default() -> Self {
        Self { sigma_v: 0.15, correlation_time: 1.0 / 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedRadarVelocity {
    /// Displacement in the first keyframe's body frame, meters.
    pub eta: Vector3<f64>,
    pub dt_total: f64,
    pub covariance: Matrix3<f64>,
    pub noise: RadarVelocityNoise,
}

impl PreintegratedRadarVelocity {
    pub fn new(noise: RadarVelocityNoise) -> Self {
        Self { eta: Vector3::zeros(), dt_total: 0.0, covariance: Matrix3::zeros(), noise }
    }

    pub fn integrate_velocity(mut self, v_body: &Vector3<f64>, gamma_t: &UnitQuaternion<f64>, dt: f64) -> Result<Self> {
        self.integrate_in_place(v_body, gamma_t, dt)?;
        Ok(self)
    }

    pub fn integrate_in_place(&mut self, v_body: &Vector3<f64>, gamma_t: &UnitQuaternion<f64>, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("velocity integration step {dt} must be positive")));
        }
        let r = gamma_t.to_rotation_matrix().into_inner();
        self.eta += r * v_body * dt;
        let var = self.noise.sigma_v.powi(2) * dt * self.noise.correlation_time;
        self.covariance += r * Matrix3::from_diagonal_element(var) * r.transpose();
        self.dt_total += dt;
        Ok(())
    }

    /// Scales the covariance, e.g. to account for intervals bridged without
    /// a valid estimate.
    pub fn inflate(&mut self, ratio: f64) {
        self.covariance *= ratio;
    }

    /// Residual `R_kᵀ(p_{k+1} − p_k) − η` with Jacobians for both states.
    pub fn evaluate(&self, x_k: &NavState, x_k1: &NavState) -> (Vector3<f64>, SMatrix<f64, 3, STATE_DIM>, SMatrix<f64, 3, STATE_DIM>) {
        let rk_t = x_k.orientation.to_rotation_matrix().into_inner().transpose();
        let local = rk_t * (x_k1.position - x_k.position);
        let mut ji = SMatrix::<f64, 3, STATE_DIM>::zeros();
        ji.fixed_view_mut::<3, 3>(0, IDX_P).copy_from(&(-rk_t));
        ji.fixed_view_mut::<3, 3>(0, IDX_THETA).copy_from(&skew(&local));
        let mut jj = SMatrix::<f64, 3, STATE_DIM>::zeros();
        jj.fixed_view_mut::<3, 3>(0, IDX_P).copy_from(&rk_t);
        (local - self.eta, ji, jj)
    }
}

pub fn velocity_residual(p: &PreintegratedRadarVelocity, x_k: &NavState, x_k1: &NavState) -> Vector3<f64> {
    p.evaluate(x_k, x_k1).0
}

/// Timestamped longitudinal speed from a valid ego-velocity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub timestamp: f64,
    pub speed: f64,
}

fn speed_at(samples: &[SpeedSample], t: f64, max_gap: f64) -> Option<f64> {
    let i = samples.partition_point(|s| s.timestamp <= t);
    let before = i.checked_sub(1).map(|j| samples[j]);
    let after = samples.get(i).copied();
    match (before, after) {
        (Some(a), Some(b)) if b.timestamp - a.timestamp <= max_gap => {
            let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
            Some(a.speed + (b.speed - a.speed) * s)
        }
        (Some(a), _) if (t - a.timestamp).abs() < 1e-9 => Some(a.speed),
        _ => None,
    }
}

/// Integrates radar speeds over the IMU checkpoints of `imu`, with the
/// trapezoidal rule realized as two half steps per interval. Speeds are
/// linearly interpolated between valid scans no further apart than
/// `max_gap`; uncovered stretches hold the nearest covered speed and
/// inflate the covariance by total/covered time. Returns `None` when less
/// than half of the interval is covered.
pub fn preintegrate_speeds(
    speeds: &[SpeedSample],
    imu: &PreintegratedImu,
    noise: RadarVelocityNoise,
    max_gap: f64,
) -> Option<PreintegratedRadarVelocity> {
    let cps = imu.checkpoints();
    if cps.len() < 2 {
        return None;
    }
    let values: Vec<Option<f64>> = cps.iter().map(|(t, _)| speed_at(speeds, *t, max_gap)).collect();
    let covered: f64 = cps
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[0].is_some() && v[1].is_some())
        .map(|(c, _)| c[1].0 - c[0].0)
        .sum();
    let total = cps.last().unwrap().0 - cps[0].0;
    if covered < 0.5 * total {
        return None;
    }
    // Hold the nearest covered value through gaps.
    let mut filled = values.clone();
    let mut last = None;
    for v in filled.iter_mut() {
        match v {
            Some(x) => last = Some(*x),
            None => *v = last,
        }
    }
    let mut next = None;
    for v in filled.iter_mut().rev() {
        match v {
            Some(x) => next = Some(*x),
            None => *v = next,
        }
    }
    let mut out = PreintegratedRadarVelocity::new(noise);
    for (c, v) in cps.windows(2).zip(filled.windows(2)) {
        let dt = c[1].0 - c[0].0;
        let v0 = Vector3::new(v[0]?, 0.0, 0.0);
        let v1 = Vector3::new(v[1]?, 0.0, 0.0);
        out.integrate_in_place(&v0, &c[0].1, 0.5 * dt).ok()?;
        out.integrate_in_place(&v1, &c[1].1, 0.5 * dt).ok()?;
    }
    if covered < total {
        out.inflate(total / covered);
    }
    Some(out)
}
