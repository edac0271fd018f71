//! Random linear-Gaussian graphs run through the sliding window and
//! through one dense batch solve.

use nalgebra::{DMatrix, DVector, SMatrix, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusion_core::backend::{Factor, FactorNoise, LmConfig, Problem, StateId, Termination};
use fusion_core::geodesy::{FrameSet, GeodeticPoint};
use fusion_core::sim::GRAVITY;
use fusion_core::state::{LocalIncrement, NavState, IDX_THETA, STATE_DIM};

pub fn frames() -> FrameSet {
    FrameSet::new(GeodeticPoint::from_degrees(30.5, 114.3, 20.0).unwrap(), Vector3::zeros(), nalgebra::Matrix3::identity()).unwrap()
}

/// Tolerances below round-off; the solver stops once steps no longer
/// reduce the cost.
pub fn tight() -> LmConfig {
    LmConfig { max_iterations: 200, gradient_tolerance: 1e-11, step_tolerance: 1e-12, ..LmConfig::default() }
}

pub fn is_theta(k: usize) -> bool {
    (IDX_THETA..IDX_THETA + 3).contains(&k)
}

pub fn random_state(rng: &mut impl Rng, index: usize) -> NavState {
    let mut x = NavState::at_rest(index as f64);
    let d = LocalIncrement::from_fn(|k, _| if is_theta(k) { 0.0 } else { rng.random_range(-5.0..5.0) });
    x.orientation = UnitQuaternion::from_euler_angles(0.1, -0.05, rng.random_range(-3.0..3.0));
    x.oplus(&d)
}

/// A random linear-Gaussian graph. Orientation is pinned by the priors and
/// untouched by the linear factors, so every factor is exactly linear in
/// the remaining coordinates.
pub struct Graph {
    pub initial: Vec<NavState>,
    /// `(newest state index, factor)` in insertion order.
    pub factors: Vec<(usize, Factor)>,
}

pub fn prior(rng: &mut impl Rng, index: usize, mean: NavState) -> Factor {
    let diag = DVector::from_fn(STATE_DIM, |k, _| if is_theta(k) { 1.0 } else { rng.random_range(0.1..1.0) });
    let sqrt_information = SMatrix::<f64, STATE_DIM, STATE_DIM>::from_diagonal(&diag.fixed_rows::<STATE_DIM>(0).into_owned());
    Factor::Prior { state: index as StateId, mean, sqrt_information }
}

pub fn linear(rng: &mut impl Rng, states: Vec<usize>, initial: &[NavState]) -> Factor {
    let rows = rng.random_range(3..=12);
    let cols = states.len() * STATE_DIM;
    let jacobian = DMatrix::from_fn(rows, cols, |_, c| if is_theta(c % STATE_DIM) { 0.0 } else { rng.random_range(-1.0..1.0) });
    let residual = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
    let linearization = states.iter().map(|&i| initial[i]).collect();
    Factor::Linear { states: states.into_iter().map(|i| i as StateId).collect(), linearization, jacobian, residual }
}

pub fn random_graph(rng: &mut impl Rng, n: usize, capacity: usize) -> Graph {
    let initial: Vec<NavState> = (0..n).map(|i| random_state(rng, i)).collect();
    let mut factors = Vec::new();
    for i in 0..n {
        let mean = initial[i].oplus(&LocalIncrement::from_fn(|k, _| if is_theta(k) { 0.0 } else { rng.random_range(-1.0..1.0) }));
        factors.push((i, prior(rng, i, mean)));
        for _ in 0..rng.random_range(0..3) {
            let span = rng.random_range(0..capacity.min(i + 1));
            let mut states: Vec<usize> = (i - span..=i).filter(|_| rng.random_bool(0.6)).collect();
            if !states.contains(&i) {
                states.push(i);
            }
            factors.push((i, linear(rng, states, &initial)));
        }
    }
    Graph { initial, factors }
}

/// Batch oracle: one Gauss-Newton solve of the normal equations over all
/// states, exact for a linear-Gaussian graph.
pub fn batch(graph: &Graph) -> Vec<NavState> {
    let n = graph.initial.len() * STATE_DIM;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let frames = frames();
    for (_, f) in &graph.factors {
        let lin = f.linearize(&|id| &graph.initial[id as usize], &frames).unwrap();
        for (a, ja) in &lin.blocks {
            let a = *a as usize * STATE_DIM;
            g.rows_mut(a, STATE_DIM).axpy(1.0, &(ja.transpose() * &lin.residual), 1.0);
            for (b, jb) in &lin.blocks {
                let b = *b as usize * STATE_DIM;
                let mut blk = h.view_mut((a, b), (STATE_DIM, STATE_DIM));
                blk += ja.transpose() * jb;
            }
        }
    }
    let dx = -h.cholesky().expect("priors make the graph well posed").solve(&g);
    graph.initial.iter().enumerate().map(|(i, x)| x.oplus(&LocalIncrement::from_column_slice(dx.rows(i * STATE_DIM, STATE_DIM).as_slice()))).collect()
}

/// Returns the final window as `(id, state)` pairs.
pub fn sliding(graph: &Graph, capacity: usize) -> Vec<(StateId, NavState)> {
    let mut p = Problem::new(frames(), capacity, GRAVITY, FactorNoise::default()).unwrap();
    for (i, x) in graph.initial.iter().enumerate() {
        if p.len() == capacity {
            p.marginalize_oldest().unwrap();
        }
        assert_eq!(p.add_state(*x).unwrap(), i as StateId);
        for (_, f) in graph.factors.iter().filter(|(newest, _)| *newest == i) {
            p.add_factor(f.clone()).unwrap();
        }
        let report = p.optimize(&tight()).unwrap();
        assert_ne!(report.termination, Termination::MaxIterations, "{report:?}");
    }
    p.ids().iter().copied().zip(p.states().iter().copied()).collect()
}

pub fn max_difference(window: &[(StateId, NavState)], reference: &[NavState]) -> f64 {
    window.iter().map(|(id, x)| x.ominus(&reference[*id as usize]).amax()).fold(0.0, f64::max)
}

/// Worst sliding-window vs batch difference over `graphs` random graphs of
/// three to six states.
pub fn worst_random(graphs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..graphs)
        .map(|_| {
            let n = rng.random_range(3..=6);
            let capacity = rng.random_range(2..n);
            let graph = random_graph(&mut rng, n, capacity);
            max_difference(&sliding(&graph, capacity), &batch(&graph))
        })
        .fold(0.0, f64::max)
}
