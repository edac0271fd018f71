//! Window construction, optimization and marginalization on simulator data
//! and on small hand-built graphs.

mod common;

use nalgebra::{DMatrix, DVector, Vector3};

use fusion_core::backend::{Factor, FactorKind, FactorNoise, InitConfig, LmConfig, Problem, PseudorangeNoise, StateId};
use fusion_core::error::Error;
use fusion_core::imu::{preintegrate_interval, ImuNoise};
use fusion_core::sim::{Simulation, GRAVITY};
use fusion_core::state::{LocalIncrement, NavState, IDX_THETA, STATE_DIM};

const GAUSSIAN: PseudorangeNoise = PseudorangeNoise::Gaussian { sigma: 1.0 };

/// Window over GNSS epochs `0..epochs` of the noise-free simulation with
/// every state placed at ground truth and a prior on the first.
fn truth_window(sim: &Simulation, epochs: usize) -> Problem {
    let speeds = common::radar_speeds(sim);
    let mut p = Problem::new(sim.frames.clone(), epochs.max(2), GRAVITY, FactorNoise::default()).unwrap();
    let x0 = *sim.truth_at(sim.gnss[0].timestamp).unwrap();
    let id0 = p.add_state(x0).unwrap();
    p.add_factor(Factor::Prior { state: id0, mean: x0, sqrt_information: InitConfig::default().prior_sqrt_information() }).unwrap();
    p.add_pseudorange_factors(id0, &sim.gnss[0], GAUSSIAN).unwrap();
    for k in 1..epochs {
        let id = p.add_epoch(common::epoch_inputs(sim, &speeds, k, GAUSSIAN)).unwrap();
        p.set_state(id, *sim.truth_at(sim.gnss[k].timestamp).unwrap()).unwrap();
    }
    p
}

fn max_position_error(p: &Problem, sim: &Simulation) -> f64 {
    p.states().iter().map(|x| (x.position - sim.truth_at(x.timestamp).unwrap().position).amax()).fold(0.0, f64::max)
}

#[test]
fn truth_is_a_fixed_point() {
    let sim = common::golden();
    let mut p = truth_window(&sim, 10);
    let report = p.optimize(&LmConfig::default()).unwrap();
    println!("{report:?}");
    assert!(report.iterations <= 2, "{report:?}");
    assert!(report.final_cost < 1e-12, "{report:?}");
    assert!(max_position_error(&p, &sim) < 1e-6);
}

#[test]
fn recovers_truth_from_one_meter_offsets() {
    let sim = common::golden();
    let mut p = truth_window(&sim, 10);
    let offset = Vector3::new(0.6, -0.64, 0.48);
    for (i, id) in p.ids().to_vec().into_iter().enumerate() {
        let mut x = *p.state(id).unwrap();
        x.position += if i % 2 == 0 { offset } else { -offset };
        p.set_state(id, x).unwrap();
    }
    let report = p.optimize(&LmConfig::default()).unwrap();
    let err = max_position_error(&p, &sim);
    println!("{report:?}, max position error {err:.2e} m");
    assert!(report.converged(), "{report:?}");
    assert!(err < 1e-6, "position error {err:.3e} m");
}

#[test]
fn epoch_factor_counts() {
    let sim = common::golden();
    let speeds = common::radar_speeds(&sim);
    let mut p = truth_window(&sim, 2);
    p.capacity = 3;
    let mut inputs = common::epoch_inputs(&sim, &speeds, 2, GAUSSIAN);
    assert_eq!(inputs.gnss.observations.len(), 8);
    assert!(inputs.radar.is_some());
    inputs.tdcp.truncate(6);
    let before = p.factor_counts();
    p.add_epoch(inputs).unwrap();
    let after = p.factor_counts();
    let added = |k: FactorKind| after.get(&k).copied().unwrap_or(0) - before.get(&k).copied().unwrap_or(0);
    assert_eq!(added(FactorKind::Imu), 1);
    assert_eq!(added(FactorKind::ClockDrift), 1);
    assert_eq!(added(FactorKind::RadarVelocity), 1);
    assert_eq!(added(FactorKind::Pseudorange), 8);
    assert_eq!(added(FactorKind::Tdcp), 6);
}

#[test]
fn degraded_epoch_stays_well_posed() {
    let sim = common::golden();
    let speeds = common::radar_speeds(&sim);
    let mut p = truth_window(&sim, 3);
    p.capacity = 4;
    let mut inputs = common::epoch_inputs(&sim, &speeds, 3, GAUSSIAN);
    inputs.radar = None;
    inputs.tdcp.clear();
    p.add_epoch(inputs).unwrap();
    let report = p.optimize(&LmConfig::default()).unwrap();
    assert!(report.converged(), "{report:?}");
    assert!(max_position_error(&p, &sim) < 1e-6);
}

#[test]
fn long_run_keeps_window_bounded() {
    let sim = common::golden();
    let speeds = common::radar_speeds(&sim);
    let capacity = 10;
    let mut p = truth_window(&sim, 1);
    p.capacity = capacity;
    for k in 1..=100 {
        p.add_epoch(common::epoch_inputs(&sim, &speeds, k, GAUSSIAN)).unwrap();
        p.optimize(&LmConfig::default()).unwrap();
        assert!(p.len() <= capacity);
        assert!(p.states().iter().all(NavState::is_finite));
        assert!(p.factors().iter().all(|f| f.states().iter().all(|id| p.index_of(*id).is_some())));
    }
    assert_eq!(p.len(), capacity);
    assert_eq!(p.factor_counts()[&FactorKind::Linear], 1);
    let err = max_position_error(&p, &sim);
    println!("max position error after 100 epochs {err:.2e} m");
    assert!(err < 1e-3);
}

#[test]
fn marginalizing_an_imu_only_state_leaves_a_unary_prior() {
    let sim = common::golden();
    let (t0, t1) = (sim.gnss[0].timestamp, sim.gnss[1].timestamp);
    let x0 = *sim.truth_at(t0).unwrap();
    let imu = preintegrate_interval(&sim.imu, t0, t1, x0.bias(), ImuNoise::default()).unwrap();
    let sqrt = fusion_core::backend::factor::sqrt_information_fixed(&imu.covariance);
    let mut p = Problem::new(sim.frames.clone(), 2, GRAVITY, FactorNoise::default()).unwrap();
    let a = p.add_state(x0).unwrap();
    let b = p.add_state(*sim.truth_at(t1).unwrap()).unwrap();
    p.add_factor(Factor::Imu { from: a, to: b, preintegration: imu, sqrt_information: sqrt, gravity: GRAVITY }).unwrap();
    p.marginalize_oldest().unwrap();
    assert_eq!(p.ids(), &[b]);
    assert_eq!(p.factors().len(), 1);
    assert_eq!(p.factors()[0].states(), vec![b]);
}

/// No rotation enters: linear factors with zero orientation columns and
/// orientation pinned by priors at the initial value.
#[test]
fn linear_toy_graph_matches_weighted_least_squares() {
    let frames = common::golden().frames;
    let n = 3;
    let mut p = Problem::new(frames, n, GRAVITY, FactorNoise::default()).unwrap();
    let initial: Vec<NavState> = (0..n).map(|i| NavState::at_rest(i as f64)).collect();
    for x in &initial {
        p.add_state(*x).unwrap();
    }
    let theta = |k: usize| (IDX_THETA..IDX_THETA + 3).contains(&k);
    // Stacked system A·δ = b with per-row weights.
    let mut rows: Vec<(Vec<(usize, DVector<f64>)>, f64, f64)> = Vec::new();
    for i in 0..n {
        for k in (0..STATE_DIM).filter(|k| !theta(*k)) {
            let mut a = DVector::zeros(STATE_DIM);
            a[k] = 1.0;
            let sigma = 0.5 + 0.1 * ((i * STATE_DIM + k) % 7) as f64;
            rows.push((vec![(i, a)], (i as f64 + 1.0) * 0.3 - 0.01 * k as f64, sigma));
        }
    }
    for i in 1..n {
        for k in (0..STATE_DIM).filter(|k| !theta(*k)) {
            let mut a = DVector::zeros(STATE_DIM);
            let mut b = DVector::zeros(STATE_DIM);
            a[k] = -1.0;
            b[k] = 1.0;
            rows.push((vec![(i - 1, a), (i, b)], 1.0 + 0.05 * k as f64, 0.2));
        }
    }
    for i in 0..n {
        let mut s = nalgebra::SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
        for k in IDX_THETA..IDX_THETA + 3 {
            s[(k, k)] = 1.0;
        }
        p.add_factor(Factor::Prior { state: i as StateId, mean: initial[i], sqrt_information: s }).unwrap();
    }
    for (blocks, target, sigma) in &rows {
        let states: Vec<StateId> = blocks.iter().map(|(i, _)| *i as StateId).collect();
        let mut jacobian = DMatrix::zeros(1, blocks.len() * STATE_DIM);
        for (j, (_, a)) in blocks.iter().enumerate() {
            jacobian.view_mut((0, j * STATE_DIM), (1, STATE_DIM)).copy_from(&(a.transpose() / *sigma));
        }
        let linearization = blocks.iter().map(|(i, _)| initial[*i]).collect();
        p.add_factor(Factor::Linear { states, linearization, jacobian, residual: DVector::from_element(1, -target / sigma) }).unwrap();
    }
    // Solver tolerances tighter than the comparison threshold.
    let config = LmConfig { gradient_tolerance: 1e-13, step_tolerance: 1e-14, ..LmConfig::default() };
    let report = p.optimize(&config).unwrap();
    assert!(report.converged(), "{report:?}");

    // Closed-form weighted least squares over the non-rotation coordinates.
    let free: Vec<usize> = (0..n * STATE_DIM).filter(|c| !theta(c % STATE_DIM)).collect();
    let mut a = DMatrix::zeros(rows.len(), free.len());
    let mut b = DVector::zeros(rows.len());
    for (r, (blocks, target, sigma)) in rows.iter().enumerate() {
        for (i, coeffs) in blocks {
            for k in 0..STATE_DIM {
                if let Some(c) = free.iter().position(|f| *f == i * STATE_DIM + k) {
                    a[(r, c)] = coeffs[k] / sigma;
                }
            }
        }
        b[r] = target / sigma;
    }
    let solution = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
    let mut worst: f64 = 0.0;
    for (c, f) in free.iter().enumerate() {
        let (i, k) = (f / STATE_DIM, f % STATE_DIM);
        let d: LocalIncrement = p.states()[i].ominus(&initial[i]);
        worst = worst.max((d[k] - solution[c]).abs());
    }
    println!("linear toy graph: worst deviation from WLS {worst:.2e}");
    assert!(worst < 1e-10, "{worst:.3e}");
}

#[test]
fn non_finite_residual_names_the_factor() {
    let sim = common::golden();
    let mut p = truth_window(&sim, 2);
    let id = p.ids()[1];
    let mut x = *p.state(id).unwrap();
    x.clock_bias = f64::NAN;
    // The window rejects non-finite states, so inject through a factor.
    let bad = Factor::Prior { state: id, mean: x, sqrt_information: InitConfig::default().prior_sqrt_information() };
    p.add_factor(bad).unwrap();
    match p.optimize(&LmConfig::default()) {
        Err(Error::NonFiniteResidual(msg)) => assert!(msg.contains("prior"), "{msg}"),
        other => panic!("expected a non-finite residual error, got {other:?}"),
    }
}

#[test]
fn unobservable_yaw_is_reported() {
    let frames = common::golden().frames;
    let mut p = Problem::new(frames, 2, GRAVITY, FactorNoise::default()).unwrap();
    let a = p.add_state(NavState::at_rest(0.0)).unwrap();
    let mut s = nalgebra::SMatrix::<f64, STATE_DIM, STATE_DIM>::identity();
    s[(IDX_THETA + 2, IDX_THETA + 2)] = 0.0;
    let mut mean = NavState::at_rest(0.0);
    mean.position = Vector3::new(1.0, 2.0, 3.0);
    p.add_factor(Factor::Prior { state: a, mean, sqrt_information: s }).unwrap();
    let report = p.optimize(&LmConfig::default()).unwrap();
    let msg = report.rank_deficiency.expect("rank deficiency reported");
    println!("{msg}");
    assert!(msg.contains("yaw"), "{msg}");
}

#[test]
fn well_posed_window_reports_full_rank() {
    let sim = common::golden();
    let mut p = truth_window(&sim, 5);
    assert_eq!(p.optimize(&LmConfig::default()).unwrap().rank_deficiency, None);
}
