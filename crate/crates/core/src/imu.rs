//! IMU preintegration between consecutive keyframes.
//!
//! Samples are folded with a midpoint rule into position (α), velocity (β)
//! and rotation (γ) terms expressed in the body frame of the first keyframe.
//! Accelerometer readings are specific force; gravity only enters through
//! [`PreintegratedImu::evaluate`].

use log::warn;
use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp_so3, log_so3, right_jacobian, right_jacobian_inv, skew};
use crate::state::{ImuBias, NavState, IDX_BA, IDX_BG, IDX_P, IDX_THETA, IDX_V, STATE_DIM};

pub const IMU_RESIDUAL_DIM: usize = 15;
/// Sample spacing above which a gap is flagged.
pub const MAX_SAMPLE_INTERVAL: f64 = 0.1;

const A: usize = 0;
const B: usize = 3;
const T: usize = 6;
const BA: usize = 9;
const BG: usize = 12;

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type ImuJacobian = SMatrix<f64, IMU_RESIDUAL_DIM, STATE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame, m/s².
    pub accel: Vector3<f64>,
    /// Angular rate in the body frame, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(timestamp: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { timestamp, accel, gyro }
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn interpolate(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let s = if b.timestamp > a.timestamp { (t - a.timestamp) / (b.timestamp - a.timestamp) } else { 0.0 };
        ImuSample {
            timestamp: t,
            accel: a.accel + (b.accel - a.accel) * s,
            gyro: a.gyro + (b.gyro - a.gyro) * s,
        }
    }
}

/// Continuous-time noise densities of the IMU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuNoise {
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s³/√Hz
    pub accel_random_walk: f64,
    /// rad/s²/√Hz
    pub gyro_random_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { accel_noise_density: 2e-2, gyro_noise_density: 2e-4, accel_random_walk: 1e-4, gyro_random_walk: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct PreintegratedImu {
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: UnitQuaternion<f64>,
    pub dt_total: f64,
    pub linearization_bias: ImuBias,
    /// Over (δα, δβ, δθ, δb_a, δb_ω).
    pub covariance: Matrix15,
    /// Columns: (b_a, b_ω).
    pub jacobian_wrt_bias: SMatrix<f64, 15, 6>,
    pub noise: ImuNoise,
    /// Set when any integrated interval exceeded [`MAX_SAMPLE_INTERVAL`].
    pub sample_gap: bool,
    start_time: Option<f64>,
    samples: Vec<ImuSample>,
    checkpoints: Vec<(f64, UnitQuaternion<f64>)>,
}

impl PreintegratedImu {
    pub fn new(linearization_bias: ImuBias, noise: ImuNoise) -> Self {
        let mut jacobian_wrt_bias = SMatrix::<f64, 15, 6>::zeros();
        jacobian_wrt_bias.fixed_view_mut::<6, 6>(BA, 0).fill_with_identity();
        Self {
            alpha: Vector3::zeros(),
            beta: Vector3::zeros(),
            gamma: UnitQuaternion::identity(),
            dt_total: 0.0,
            linearization_bias,
            covariance: Matrix15::zeros(),
            jacobian_wrt_bias,
            noise,
            sample_gap: false,
            start_time: None,
            samples: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn start_time(&self) -> Option<f64> {
        self.start_time
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    /// Rotation checkpoints `(timestamp, γ_t)` at every integrated sample.
    pub fn checkpoints(&self) -> &[(f64, UnitQuaternion<f64>)] {
        &self.checkpoints
    }

    /// Preintegrated rotation at time `t`, slerped between checkpoints.
    pub fn rotation_at(&self, t: f64) -> Option<UnitQuaternion<f64>> {
        let cp = &self.checkpoints;
        let first = cp.first()?;
        let last = cp.last()?;
        if t <= first.0 {
            return Some(first.1);
        }
        if t >= last.0 {
            return Some(last.1);
        }
        let i = cp.partition_point(|(ts, _)| *ts <= t);
        let (t0, q0) = cp[i - 1];
        let (t1, q1) = cp[i];
        Some(crate::math::slerp(&q0, &q1, (t - t0) / (t1 - t0)))
    }

    /// Folds one sample interval into the preintegration.
    pub fn integrate(mut self, sample_k: &ImuSample, sample_k1: &ImuSample) -> Result<Self> {
        self.integrate_in_place(sample_k, sample_k1)?;
        Ok(self)
    }

    pub fn integrate_in_place(&mut self, sample_k: &ImuSample, sample_k1: &ImuSample) -> Result<()> {
        let dt = sample_k1.timestamp - sample_k.timestamp;
        if !(dt > 0.0) {
            return Err(Error::NonMonotonicTime { prev: sample_k.timestamp, next: sample_k1.timestamp });
        }
        if let Some(last) = self.samples.last() {
            if (last.timestamp - sample_k.timestamp).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "sample at {} does not continue the stream ending at {}",
                    sample_k.timestamp, last.timestamp
                )));
            }
        } else {
            self.start_time = Some(sample_k.timestamp);
            self.samples.push(*sample_k);
            self.checkpoints.push((sample_k.timestamp, self.gamma));
        }
        if dt > MAX_SAMPLE_INTERVAL {
            warn!("IMU sample gap of {dt:.3} s at t = {:.3}", sample_k.timestamp);
            self.sample_gap = true;
        }
        self.propagate(sample_k, sample_k1, dt);
        self.samples.push(*sample_k1);
        self.checkpoints.push((sample_k1.timestamp, self.gamma));
        Ok(())
    }

    fn propagate(&mut self, s0: &ImuSample, s1: &ImuSample, dt: f64) {
        let ba = self.linearization_bias.accel;
        let bg = self.linearization_bias.gyro;
        let a0 = s0.accel - ba;
        let a1 = s1.accel - ba;
        let w = 0.5 * (s0.gyro + s1.gyro) - bg;

        let r0 = self.gamma.to_rotation_matrix().into_inner();
        let dq = exp_so3(&(w * dt));
        let mut gamma1 = self.gamma * dq;
        gamma1.renormalize();
        let r1 = gamma1.to_rotation_matrix().into_inner();
        let acc = 0.5 * (r0 * a0 + r1 * a1);

        // Error-state transition over (δα, δβ, δθ, δb_a, δb_ω).
        let dq_t = dq.to_rotation_matrix().into_inner().transpose();
        let jr = right_jacobian(&(w * dt));
        let a0x = skew(&a0);
        let a1x = skew(&a1);
        let dt2 = dt * dt;
        let i3 = Matrix3::identity();
        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(A, B).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(A, T).copy_from(&(-0.25 * dt2 * (r0 * a0x + r1 * a1x * dq_t)));
        f.fixed_view_mut::<3, 3>(A, BA).copy_from(&(-0.25 * dt2 * (r0 + r1)));
        f.fixed_view_mut::<3, 3>(A, BG).copy_from(&(0.25 * dt2 * dt * r1 * a1x * jr));
        f.fixed_view_mut::<3, 3>(B, T).copy_from(&(-0.5 * dt * (r0 * a0x + r1 * a1x * dq_t)));
        f.fixed_view_mut::<3, 3>(B, BA).copy_from(&(-0.5 * dt * (r0 + r1)));
        f.fixed_view_mut::<3, 3>(B, BG).copy_from(&(0.5 * dt2 * r1 * a1x * jr));
        f.fixed_view_mut::<3, 3>(T, T).copy_from(&dq_t);
        f.fixed_view_mut::<3, 3>(T, BG).copy_from(&(-dt * jr));

        // Noise inputs: accel/gyro at both ends, then the two bias walks.
        let mut v = SMatrix::<f64, 15, 18>::zeros();
        let wa = -0.125 * dt2 * dt * r1 * a1x;
        let wb = -0.25 * dt2 * r1 * a1x;
        v.fixed_view_mut::<3, 3>(A, 0).copy_from(&(0.25 * dt2 * r0));
        v.fixed_view_mut::<3, 3>(A, 3).copy_from(&wa);
        v.fixed_view_mut::<3, 3>(A, 6).copy_from(&(0.25 * dt2 * r1));
        v.fixed_view_mut::<3, 3>(A, 9).copy_from(&wa);
        v.fixed_view_mut::<3, 3>(B, 0).copy_from(&(0.5 * dt * r0));
        v.fixed_view_mut::<3, 3>(B, 3).copy_from(&wb);
        v.fixed_view_mut::<3, 3>(B, 6).copy_from(&(0.5 * dt * r1));
        v.fixed_view_mut::<3, 3>(B, 9).copy_from(&wb);
        v.fixed_view_mut::<3, 3>(T, 3).copy_from(&(0.5 * dt * jr));
        v.fixed_view_mut::<3, 3>(T, 9).copy_from(&(0.5 * dt * jr));
        v.fixed_view_mut::<3, 3>(BA, 12).copy_from(&(i3 * dt));
        v.fixed_view_mut::<3, 3>(BG, 15).copy_from(&(i3 * dt));

        let n = &self.noise;
        let qa = n.accel_noise_density.powi(2) / dt;
        let qg = n.gyro_noise_density.powi(2) / dt;
        let qba = n.accel_random_walk.powi(2) / dt;
        let qbg = n.gyro_random_walk.powi(2) / dt;
        let mut q = SVector::<f64, 18>::zeros();
        for i in 0..3 {
            q[i] = qa;
            q[3 + i] = qg;
            q[6 + i] = qa;
            q[9 + i] = qg;
            q[12 + i] = qba;
            q[15 + i] = qbg;
        }
        let vq = v * SMatrix::<f64, 18, 18>::from_diagonal(&q);
        self.covariance = f * self.covariance * f.transpose() + vq * v.transpose();
        self.covariance = 0.5 * (self.covariance + self.covariance.transpose());
        self.jacobian_wrt_bias = f * self.jacobian_wrt_bias;

        self.alpha += self.beta * dt + 0.5 * acc * dt2;
        self.beta += acc * dt;
        self.gamma = gamma1;
        self.dt_total += dt;
    }

    /// Re-runs the integration over the buffered samples with a new bias.
    pub fn reintegrate(&self, bias: ImuBias) -> Result<Self> {
        let mut out = PreintegratedImu::new(bias, self.noise);
        for w in self.samples.windows(2) {
            out.integrate_in_place(&w[0], &w[1])?;
        }
        Ok(out)
    }

    /// First-order bias update through the stored Jacobians. Deltas above
    /// `threshold` fall back to re-integration from the buffered samples.
    pub fn correct_for_bias(&self, new_bias: ImuBias, threshold: f64) -> Result<Self> {
        let delta = new_bias.max_abs_delta(&self.linearization_bias);
        if delta > threshold {
            if self.samples.len() < 2 {
                return Err(Error::BiasRelinearization { delta, threshold });
            }
            return self.reintegrate(new_bias);
        }
        let (alpha, beta, gamma) = self.corrected_terms(&new_bias);
        let mut out = self.clone();
        out.alpha = alpha;
        out.beta = beta;
        out.gamma = gamma;
        out.linearization_bias = new_bias;
        Ok(out)
    }

    fn corrected_terms(&self, bias: &ImuBias) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
        let dba = bias.accel - self.linearization_bias.accel;
        let dbg = bias.gyro - self.linearization_bias.gyro;
        let j = &self.jacobian_wrt_bias;
        let alpha = self.alpha + j.fixed_view::<3, 3>(A, 0) * dba + j.fixed_view::<3, 3>(A, 3) * dbg;
        let beta = self.beta + j.fixed_view::<3, 3>(B, 0) * dba + j.fixed_view::<3, 3>(B, 3) * dbg;
        let gamma = self.gamma * exp_so3(&(j.fixed_view::<3, 3>(T, 3) * dbg));
        (alpha, beta, gamma)
    }

    /// Propagates `xi` through the preintegrated motion (bias held constant).
    pub fn predict(&self, xi: &NavState, gravity: &Vector3<f64>) -> NavState {
        let dt = self.dt_total;
        let (alpha, beta, gamma) = self.corrected_terms(&xi.bias());
        let mut orientation = xi.orientation * gamma;
        orientation.renormalize();
        NavState {
            timestamp: xi.timestamp + dt,
            position: xi.position + xi.velocity * dt + 0.5 * gravity * dt * dt + xi.orientation * alpha,
            velocity: xi.velocity + gravity * dt + xi.orientation * beta,
            orientation,
            accel_bias: xi.accel_bias,
            gyro_bias: xi.gyro_bias,
            clock_bias: xi.clock_bias + xi.clock_drift * dt,
            clock_drift: xi.clock_drift,
        }
    }

    /// Residual over (δα, δβ, δθ, δb_a, δb_ω) with Jacobians with respect to
    /// the local increments of both states.
    pub fn evaluate(
        &self,
        xi: &NavState,
        xj: &NavState,
        gravity: &Vector3<f64>,
    ) -> (SVector<f64, IMU_RESIDUAL_DIM>, ImuJacobian, ImuJacobian) {
        let dt = self.dt_total;
        let (alpha, beta, gamma) = self.corrected_terms(&xi.bias());
        let dbg = xi.gyro_bias - self.linearization_bias.gyro;
        let j_theta_bg = self.jacobian_wrt_bias.fixed_view::<3, 3>(T, 3).into_owned();
        let phi = j_theta_bg * dbg;

        let ri = xi.orientation.to_rotation_matrix().into_inner();
        let rj = xj.orientation.to_rotation_matrix().into_inner();
        let ri_t = ri.transpose();
        let dp = xj.position - xi.position - xi.velocity * dt - 0.5 * gravity * dt * dt;
        let dv = xj.velocity - xi.velocity - gravity * dt;
        let e = gamma.inverse() * xi.orientation.inverse() * xj.orientation;
        let r_theta = log_so3(&e);

        let mut r = SVector::<f64, IMU_RESIDUAL_DIM>::zeros();
        r.fixed_rows_mut::<3>(A).copy_from(&(ri_t * dp - alpha));
        r.fixed_rows_mut::<3>(B).copy_from(&(ri_t * dv - beta));
        r.fixed_rows_mut::<3>(T).copy_from(&r_theta);
        r.fixed_rows_mut::<3>(BA).copy_from(&(xj.accel_bias - xi.accel_bias));
        r.fixed_rows_mut::<3>(BG).copy_from(&(xj.gyro_bias - xi.gyro_bias));

        let jb = &self.jacobian_wrt_bias;
        let jr_inv = right_jacobian_inv(&r_theta);
        let re_t = e.to_rotation_matrix().into_inner().transpose();
        let i3 = Matrix3::identity();

        let mut ji = ImuJacobian::zeros();
        ji.fixed_view_mut::<3, 3>(A, IDX_P).copy_from(&(-ri_t));
        ji.fixed_view_mut::<3, 3>(A, IDX_V).copy_from(&(-ri_t * dt));
        ji.fixed_view_mut::<3, 3>(A, IDX_THETA).copy_from(&skew(&(ri_t * dp)));
        ji.fixed_view_mut::<3, 3>(A, IDX_BA).copy_from(&(-jb.fixed_view::<3, 3>(A, 0)));
        ji.fixed_view_mut::<3, 3>(A, IDX_BG).copy_from(&(-jb.fixed_view::<3, 3>(A, 3)));
        ji.fixed_view_mut::<3, 3>(B, IDX_V).copy_from(&(-ri_t));
        ji.fixed_view_mut::<3, 3>(B, IDX_THETA).copy_from(&skew(&(ri_t * dv)));
        ji.fixed_view_mut::<3, 3>(B, IDX_BA).copy_from(&(-jb.fixed_view::<3, 3>(B, 0)));
        ji.fixed_view_mut::<3, 3>(B, IDX_BG).copy_from(&(-jb.fixed_view::<3, 3>(B, 3)));
        ji.fixed_view_mut::<3, 3>(T, IDX_THETA).copy_from(&(-jr_inv * rj.transpose() * ri));
        ji.fixed_view_mut::<3, 3>(T, IDX_BG).copy_from(&(-jr_inv * re_t * right_jacobian(&phi) * j_theta_bg));
        ji.fixed_view_mut::<3, 3>(BA, IDX_BA).copy_from(&(-i3));
        ji.fixed_view_mut::<3, 3>(BG, IDX_BG).copy_from(&(-i3));

        let mut jj = ImuJacobian::zeros();
        jj.fixed_view_mut::<3, 3>(A, IDX_P).copy_from(&ri_t);
        jj.fixed_view_mut::<3, 3>(B, IDX_V).copy_from(&ri_t);
        jj.fixed_view_mut::<3, 3>(T, IDX_THETA).copy_from(&jr_inv);
        jj.fixed_view_mut::<3, 3>(BA, IDX_BA).copy_from(&i3);
        jj.fixed_view_mut::<3, 3>(BG, IDX_BG).copy_from(&i3);

        (r, ji, jj)
    }
}

/// IMU residual between two states, see [`PreintegratedImu::evaluate`].
pub fn imu_residual(
    p: &PreintegratedImu,
    x_k: &NavState,
    x_k1: &NavState,
    gravity: &Vector3<f64>,
) -> SVector<f64, IMU_RESIDUAL_DIM> {
    p.evaluate(x_k, x_k1, gravity).0
}

/// Preintegrates all samples covering `[t0, t1]`, synthesizing boundary
/// samples by linear interpolation when the stream does not hit them.
pub fn preintegrate_interval(
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
    bias: ImuBias,
    noise: ImuNoise,
) -> Result<PreintegratedImu> {
    const EPS: f64 = 1e-9;
    if !(t1 > t0) {
        return Err(Error::NonMonotonicTime { prev: t0, next: t1 });
    }
    let first = samples.first().ok_or_else(|| Error::EmptyInput("no IMU samples".into()))?;
    let last = samples.last().unwrap();
    if first.timestamp > t0 + EPS || last.timestamp < t1 - EPS {
        return Err(Error::InvalidArgument(format!(
            "IMU samples [{}, {}] do not cover [{t0}, {t1}]",
            first.timestamp, last.timestamp
        )));
    }
    let sample_at = |t: f64| -> ImuSample {
        let i = samples.partition_point(|s| s.timestamp < t - EPS);
        let s = &samples[i.min(samples.len() - 1)];
        if (s.timestamp - t).abs() <= EPS || i == 0 {
            ImuSample { timestamp: t, ..*s }
        } else {
            ImuSample::interpolate(&samples[i - 1], s, t)
        }
    };
    let mut seq = vec![sample_at(t0)];
    seq.extend(samples.iter().filter(|s| s.timestamp > t0 + EPS && s.timestamp < t1 - EPS).copied());
    seq.push(sample_at(t1));
    let mut p = PreintegratedImu::new(bias, noise);
    for w in seq.windows(2) {
        p.integrate_in_place(&w[0], &w[1])?;
    }
    Ok(p)
}
