//! Smooth synthetic motion, the figure-eight driven by the simulator, and a
//! 1e-5 s fine-step integration of the continuous kinematics.

use nalgebra::{Matrix3, Rotation3, Vector3};

use fusion_core::imu::{ImuNoise, ImuSample, PreintegratedImu};
use fusion_core::radar::{PreintegratedRadarVelocity, RadarVelocityNoise};
use fusion_core::state::ImuBias;

pub const DURATION: f64 = 1.0;
const FINE_STEP: f64 = 1e-5;

/// Planar figure-eight at constant speed: heading
/// `ψ(t) = ψ₀ + A(1 − cos ωt)`, one lap per `PERIOD`.
const SPEED: f64 = 8.0;
const PERIOD: f64 = 100.0;
const AMPLITUDE: f64 = 2.404_825_557_695_773;
const GRAVITY: f64 = 9.81;

fn yaw_rate(t: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI / PERIOD;
    AMPLITUDE * w * (w * t).sin()
}

fn specific_force(t: f64) -> Vector3<f64> {
    Vector3::new(0.0, SPEED * yaw_rate(t), GRAVITY)
}

fn angular_rate(t: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, yaw_rate(t))
}

fn body_velocity(_t: f64) -> Vector3<f64> {
    Vector3::new(SPEED, 0.0, 0.0)
}

/// Interval starts covering one lap.
pub fn starts() -> impl Iterator<Item = f64> {
    (0..20).map(|k| k as f64 * 5.0 + 0.37)
}

pub struct Reference {
    pub rotation: Matrix3<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub radar_displacement: Vector3<f64>,
}

/// Trapezoidal integration of `Ṙ = R[ω]×`, `v̇ = R f`, `ṗ = v` and
/// `η̇ = R v_b` in the frame of the interval start.
pub fn fine_reference(t0: f64) -> Reference {
    let steps = (DURATION / FINE_STEP).round() as usize;
    let mut rotation = Matrix3::identity();
    let mut velocity = Vector3::zeros();
    let mut position = Vector3::zeros();
    let mut eta = Vector3::zeros();
    for k in 0..steps {
        let t = t0 + k as f64 * FINE_STEP;
        let t1 = t + FINE_STEP;
        let mid = 0.5 * (angular_rate(t) + angular_rate(t1));
        // Second-order correction for the rotation of the rate vector.
        let incr = mid * FINE_STEP + (angular_rate(t).cross(&angular_rate(t1))) * FINE_STEP * FINE_STEP / 12.0;
        let next = rotation * Rotation3::new(incr).into_inner();
        let acc = 0.5 * (rotation * specific_force(t) + next * specific_force(t1));
        position += velocity * FINE_STEP + 0.5 * acc * FINE_STEP * FINE_STEP;
        velocity += acc * FINE_STEP;
        eta += 0.5 * FINE_STEP * (rotation * body_velocity(t) + next * body_velocity(t1));
        rotation = next;
    }
    Reference { rotation, velocity, position, radar_displacement: eta }
}

fn imu_sample(t0: f64, k: usize, rate: f64) -> ImuSample {
    let t = t0 + k as f64 / rate;
    ImuSample::new(t, specific_force(t), angular_rate(t))
}

/// Midpoint IMU preintegration and trapezoidal radar displacement at
/// `rate` samples per second.
pub fn preintegrate(t0: f64, rate: f64) -> (PreintegratedImu, PreintegratedRadarVelocity) {
    let mut imu = PreintegratedImu::new(ImuBias::default(), ImuNoise::default());
    let mut radar = PreintegratedRadarVelocity::new(RadarVelocityNoise::default());
    let n = (DURATION * rate).round() as usize;
    for k in 0..n {
        let (s0, s1) = (imu_sample(t0, k, rate), imu_sample(t0, k + 1, rate));
        let start = imu.gamma;
        imu.integrate_in_place(&s0, &s1).unwrap();
        let half = 0.5 * (s1.timestamp - s0.timestamp);
        radar.integrate_in_place(&body_velocity(s0.timestamp), &start, half).unwrap();
        radar.integrate_in_place(&body_velocity(s1.timestamp), &imu.gamma, half).unwrap();
    }
    (imu, radar)
}

/// Worst position-term errors `(imu α, radar η)` over one lap of 1 s
/// intervals at the given sample rate.
pub fn worst_errors(rate: f64) -> (f64, f64) {
    starts().fold((0.0f64, 0.0f64), |(a, r), t0| {
        let reference = fine_reference(t0);
        let (imu, radar) = preintegrate(t0, rate);
        (a.max((imu.alpha - reference.position).norm()), r.max((radar.eta - reference.radar_displacement).norm()))
    })
}
