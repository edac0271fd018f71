//! Analytic factor Jacobians against central finite differences on the
//! state manifold, over random configurations per factor type.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusion_core::backend::factor::{sqrt_information, sqrt_information_fixed};
use fusion_core::backend::{Factor, PseudorangeNoise, StateId};
use fusion_core::geodesy::{FrameSet, GeodeticPoint};
use fusion_core::gnss::{b1i_wavelength, SatelliteObservation, SatelliteState, TdcpMeasurement};
use fusion_core::imu::{ImuNoise, ImuSample, PreintegratedImu};
use fusion_core::radar::{PreintegratedRadarVelocity, RadarVelocityNoise};
use fusion_core::robust::GmmNoiseModel;
use fusion_core::sim::GRAVITY;
use fusion_core::state::{ImuBias, LocalIncrement, NavState, STATE_DIM};

const STEP: f64 = 1e-6;
pub const TRIALS: usize = 100;

fn frames() -> FrameSet {
    FrameSet::new(
        GeodeticPoint::from_degrees(30.52, 114.36, 25.0).unwrap(),
        Vector3::new(0.2, -0.1, 1.1),
        *nalgebra::Rotation3::from_euler_angles(0.0, 0.0, 0.3).matrix(),
    )
    .unwrap()
}

fn vec3(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn random_state(rng: &mut impl Rng, t: f64) -> NavState {
    NavState {
        timestamp: t,
        position: vec3(rng, 200.0),
        velocity: vec3(rng, 10.0),
        orientation: UnitQuaternion::from_euler_angles(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-3.1..3.1)),
        accel_bias: vec3(rng, 0.1),
        gyro_bias: vec3(rng, 0.01),
        clock_bias: rng.random_range(-300.0..300.0),
        clock_drift: rng.random_range(-2.0..2.0),
    }
}

/// Small random perturbation on the manifold.
fn jitter(rng: &mut impl Rng, x: &NavState, scale: f64) -> NavState {
    let d = LocalIncrement::from_fn(|_, _| rng.random_range(-scale..scale));
    x.oplus(&d)
}

fn random_satellite(rng: &mut impl Rng, frames: &FrameSet) -> SatelliteState {
    let el: f64 = rng.random_range(0.3..1.4);
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
    SatelliteState {
        position_ecef: frames.enu_to_ecef(&(dir * rng.random_range(2.0e7..2.4e7))),
        clock_error: rng.random_range(-1000.0..1000.0),
        tropo_delay: rng.random_range(2.0..8.0),
        iono_delay: rng.random_range(1.0..10.0),
    }
}

fn random_preintegration(rng: &mut impl Rng, bias: ImuBias) -> PreintegratedImu {
    let mut p = PreintegratedImu::new(bias, ImuNoise::default());
    let a0 = vec3(rng, 2.0) + Vector3::new(0.0, 0.0, 9.81);
    let w0 = vec3(rng, 0.3);
    let phase: f64 = rng.random_range(0.0..6.0);
    let sample = |k: usize| {
        let t = k as f64 * 0.01;
        let s = (3.0 * t + phase).sin();
        ImuSample::new(t, a0 + Vector3::new(0.5 * s, -0.3 * s, 0.1 * s), w0 + Vector3::new(0.0, 0.02 * s, 0.1 * s))
    };
    for k in 0..100 {
        p.integrate_in_place(&sample(k), &sample(k + 1)).unwrap();
    }
    p
}

/// Relative Frobenius error of the stacked analytic Jacobian against
/// central differences of the whitened residual.
fn jacobian_error(factor: &Factor, states: &BTreeMap<StateId, NavState>, frames: &FrameSet) -> f64 {
    let lin = factor.linearize(&|id| &states[&id], frames).unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    for (id, block) in &lin.blocks {
        let mut fd = DMatrix::zeros(lin.residual.len(), STATE_DIM);
        for k in 0..STATE_DIM {
            let eval = |h: f64| -> DVector<f64> {
                let mut s = states.clone();
                let mut d = LocalIncrement::zeros();
                d[k] = h;
                s.insert(*id, states[id].oplus(&d));
                factor.linearize(&|i| &s[&i], frames).unwrap().residual
            };
            fd.set_column(k, &((eval(STEP) - eval(-STEP)) / (2.0 * STEP)));
        }
        num += (&fd - block).norm_squared();
        den += block.norm_squared();
    }
    (num / den.max(1e-300)).sqrt()
}

/// Worst relative error over [`TRIALS`] configurations.
fn run(name: &str, mut build: impl FnMut(&mut ChaCha8Rng) -> (Factor, BTreeMap<StateId, NavState>)) -> f64 {
    let frames = frames();
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    (0..TRIALS).map(|_| {
        let (factor, states) = build(&mut rng);
        jacobian_error(&factor, &states, &frames)
    }).fold(0.0, f64::max)
}

fn pair(rng: &mut ChaCha8Rng) -> BTreeMap<StateId, NavState> {
    let x0 = random_state(rng, 0.0);
    let x1 = random_state(rng, 1.0);
    let x1 = jitter(rng, &x1, 0.1);
    BTreeMap::from([(0, x0), (1, x1)])
}

pub fn prior_factor() -> f64 {
    run("prior", |rng| {
        let x = random_state(rng, 0.0);
        let mean = jitter(rng, &x, 0.3);
        let a = DMatrix::from_fn(STATE_DIM, STATE_DIM, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(STATE_DIM, STATE_DIM) * 0.1;
        let s = sqrt_information(&cov);
        let sqrt = nalgebra::SMatrix::<f64, STATE_DIM, STATE_DIM>::from_iterator(s.iter().cloned());
        (Factor::Prior { state: 0, mean, sqrt_information: sqrt }, BTreeMap::from([(0, x)]))
    })
}

pub fn imu_factor() -> f64 {
    run("imu", |rng| {
        let lin_bias = ImuBias::new(vec3(rng, 0.05), vec3(rng, 0.005));
        let p = random_preintegration(rng, lin_bias);
        let mut x0 = random_state(rng, 0.0);
        x0.accel_bias = lin_bias.accel + vec3(rng, 0.01);
        x0.gyro_bias = lin_bias.gyro + vec3(rng, 0.001);
        let x1 = jitter(rng, &p.predict(&x0, &GRAVITY), 0.05);
        let sqrt = sqrt_information_fixed(&p.covariance);
        (Factor::Imu { from: 0, to: 1, preintegration: p, sqrt_information: sqrt, gravity: GRAVITY }, BTreeMap::from([(0, x0), (1, x1)]))
    })
}

pub fn radar_velocity_factor() -> f64 {
    run("radar_velocity", |rng| {
        let mut p = PreintegratedRadarVelocity::new(RadarVelocityNoise::default());
        let speed = rng.random_range(0.0..15.0);
        let rate = rng.random_range(-0.3..0.3);
        for k in 0..20 {
            let q = UnitQuaternion::from_euler_angles(0.0, 0.0, rate * k as f64 * 0.05);
            p.integrate_in_place(&Vector3::new(speed, 0.0, 0.0), &q, 0.05).unwrap();
        }
        let sqrt: Matrix3<f64> = sqrt_information_fixed(&p.covariance);
        (Factor::RadarVelocity { from: 0, to: 1, preintegration: p, sqrt_information: sqrt }, pair(rng))
    })
}

pub fn clock_drift_factor() -> f64 {
    run("clock_drift", |rng| {
        let dt = rng.random_range(0.5..2.0);
        (Factor::ClockDrift { from: 0, to: 1, dt, sigma_bias: 0.3, sigma_drift: 0.05 }, pair(rng))
    })
}

pub fn pseudorange_factor() -> f64 {
    let f = frames();
    run("pseudorange", |rng| {
        let satellite = random_satellite(rng, &f);
        let observation = SatelliteObservation {
            sat_id: 3,
            pseudorange: (satellite.position_ecef - f.origin_ecef).norm() + rng.random_range(-500.0..500.0),
            carrier_phase: None,
            doppler: None,
            snr: 42.0,
            wavelength: b1i_wavelength(),
        };
        let x = random_state(rng, 0.0);
        (Factor::Pseudorange { state: 0, observation, satellite, noise: PseudorangeNoise::Gaussian { sigma: 1.3 } }, BTreeMap::from([(0, x)]))
    })
}

pub fn tdcp_factor() -> f64 {
    let f = frames();
    run("tdcp", |rng| {
        let s0 = random_satellite(rng, &f);
        let mut s1 = s0;
        s1.position_ecef += vec3(rng, 3000.0);
        s1.clock_error += rng.random_range(-1.0..1.0);
        let delta = rng.random_range(-3000.0..3000.0);
        let m = TdcpMeasurement { sat_id: 4, epoch_pair: (0.0, 1.0), delta_phase: delta, raw_delta_phase: delta, accepted: true };
        (Factor::Tdcp { from: 0, to: 1, measurement: m, satellites: (s0, s1), sigma: 0.01 }, pair(rng))
    })
}

pub fn linear_factor() -> f64 {
    run("linear", |rng| {
        let states = pair(rng);
        let rows = 2 * STATE_DIM;
        let jacobian = DMatrix::from_fn(rows, 2 * STATE_DIM, |_, _| rng.random_range(-2.0..2.0));
        let residual = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        let linearization = vec![jitter(rng, &states[&0], 0.4), jitter(rng, &states[&1], 0.4)];
        (Factor::Linear { states: vec![0, 1], linearization, jacobian, residual }, states)
    })
}

/// The mixture factor is carried in an equivalent least-squares form, so
/// its check is on the cost gradient: `Jᵀr` must equal the numerical
/// derivative of the robust cost.
pub fn pseudorange_mixture_gradient() -> f64 {
    let f = frames();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let model = GmmNoiseModel::new([0.75, 0.25], [0.2, -4.0], [1.0, 30.0]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let satellite = random_satellite(&mut rng, &f);
        let x = random_state(&mut rng, 0.0);
        let observation = SatelliteObservation {
            sat_id: 1,
            pseudorange: (satellite.position_ecef - f.origin_ecef).norm() + rng.random_range(-500.0..500.0),
            carrier_phase: None,
            doppler: None,
            snr: 40.0,
            wavelength: b1i_wavelength(),
        };
        let probe = Factor::Pseudorange { state: 0, observation, satellite, noise: PseudorangeNoise::Gaussian { sigma: 1.0 } };
        let states = BTreeMap::from([(0, x)]);
        // Place the residual across the interesting part of the mixture.
        let r0 = probe.linearize(&|i| &states[&i], &f).unwrap().residual[0];
        let target = rng.random_range(-15.0..15.0);
        let observation = SatelliteObservation { pseudorange: observation.pseudorange + r0 - target, ..observation };
        let factor = Factor::Pseudorange { state: 0, observation, satellite, noise: PseudorangeNoise::Mixture(model) };
        let lin = factor.linearize(&|i| &states[&i], &f).unwrap();
        let analytic = lin.blocks[0].1.transpose() * &lin.residual;
        let mut fd = DVector::zeros(STATE_DIM);
        for k in 0..STATE_DIM {
            let cost = |h: f64| {
                let mut d = LocalIncrement::zeros();
                d[k] = h;
                let s = BTreeMap::from([(0, x.oplus(&d))]);
                factor.linearize(&|i| &s[&i], &f).unwrap().cost
            };
            fd[k] = (cost(STEP) - cost(-STEP)) / (2.0 * STEP);
        }
        worst = worst.max((&fd - &analytic).norm() / analytic.norm().max(1e-300));
    }
    worst
}

/// Worst relative error per factor type.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("prior", prior_factor()),
        ("imu", imu_factor()),
        ("radar_velocity", radar_velocity_factor()),
        ("clock_drift", clock_drift_factor()),
        ("pseudorange", pseudorange_factor()),
        ("tdcp", tdcp_factor()),
        ("linear", linear_factor()),
        ("pseudorange_mixture_gradient", pseudorange_mixture_gradient()),
    ]
}
