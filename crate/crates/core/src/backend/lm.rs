//! Levenberg–Marquardt over the window with multiplicative rotation
//! updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::factor::{sqrt_information_fixed, Factor};
use super::problem::Problem;
use crate::error::{Error, Result};
use crate::state::{LocalIncrement, NavState, IDX_BA, IDX_BG, IDX_CLOCK, IDX_DRIFT, IDX_P, IDX_THETA, IDX_V, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_lambda: f64,
    /// Bias change (max abs component) that triggers IMU re-integration.
    pub bias_relinearization_threshold: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            initial_lambda: 1e-4,
            bias_relinearization_threshold: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    NoProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Set when the normal equations at the solution are rank deficient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_deficiency: Option<String>,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Step)
    }
}

const MAX_LAMBDA: f64 = 1e16;

fn component_name(k: usize) -> &'static str {
    match k {
        k if (IDX_P..IDX_P + 3).contains(&k) => "position",
        k if (IDX_V..IDX_V + 3).contains(&k) => "velocity",
        k if k == IDX_THETA + 2 => "yaw",
        k if (IDX_THETA..IDX_THETA + 3).contains(&k) => "roll/pitch",
        k if (IDX_BA..IDX_BA + 3).contains(&k) => "accelerometer bias",
        k if (IDX_BG..IDX_BG + 3).contains(&k) => "gyroscope bias",
        IDX_CLOCK => "clock bias",
        IDX_DRIFT => "clock drift",
        _ => "unknown",
    }
}

/// Relative eigenvalue below which the normal equations count as rank
/// deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Diagnostic for `h` when its smallest eigenvalue is negligible relative
/// to the largest.
pub fn check_rank(h: &DMatrix<f64>, ids: &[u64]) -> Option<String> {
    let eig = h.clone().symmetric_eigen();
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let smin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (smin <= RANK_TOLERANCE * smax).then(|| rank_diagnostic(h, ids))
}

/// Names the direction of smallest curvature of `h`.
pub fn rank_diagnostic(h: &DMatrix<f64>, ids: &[u64]) -> String {
    let eig = h.clone().symmetric_eigen();
    let (imin, smin) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |a, (i, s)| if *s < a.1 { (i, *s) } else { a });
    let v = eig.eigenvectors.column(imin);
    let (kmax, _) = v.iter().enumerate().fold((0, 0.0), |a, (k, x)| if x.abs() > a.1 { (k, x.abs()) } else { a });
    format!(
        "normal equations rank deficient: smallest eigenvalue {smin:.3e}, direction dominated by {} of state {}",
        component_name(kmax % STATE_DIM),
        ids.get(kmax / STATE_DIM).copied().unwrap_or_default()
    )
}

fn apply_step(states: &[NavState], dx: &DVector<f64>) -> Vec<NavState> {
    states
        .iter()
        .enumerate()
        .map(|(i, x)| x.oplus(&LocalIncrement::from_column_slice(dx.rows(i * STATE_DIM, STATE_DIM).as_slice())))
        .collect()
}

impl Problem {
    fn relinearize_imu_biases(&mut self, threshold: f64) -> Result<()> {
        for k in 0..self.factors.len() {
            let Factor::Imu { from, preintegration, .. } = &self.factors[k] else { continue };
            let bias = self.state(*from).expect("factor state in window").bias();
            if bias.max_abs_delta(&preintegration.linearization_bias) <= threshold || preintegration.samples().len() < 2 {
                continue;
            }
            let p = preintegration.reintegrate(bias)?;
            let s = sqrt_information_fixed(&p.covariance);
            if let Factor::Imu { preintegration, sqrt_information, .. } = &mut self.factors[k] {
                *preintegration = p;
                *sqrt_information = s;
            }
        }
        Ok(())
    }

    /// Minimizes the total cost of all factors in place.
    pub fn optimize(&mut self, config: &LmConfig) -> Result<ConvergenceReport> {
        if self.is_empty() {
            return Err(Error::NotInitialized);
        }
        self.relinearize_imu_biases(config.bias_relinearization_threshold)?;
        let mut lins = self.linearize_all(&self.states)?;
        let mut cost: f64 = lins.iter().map(|l| l.cost).sum();
        let initial_cost = cost;
        let mut lambda = config.initial_lambda;
        let mut iterations = 0;
        let termination = loop {
            if iterations >= config.max_iterations {
                break Termination::MaxIterations;
            }
            let (h, g) = self.normal_equations(&lins);
            if g.amax() < config.gradient_tolerance {
                break Termination::Gradient;
            }
            iterations += 1;
            let mut accepted = false;
            let mut small_step = false;
            while lambda <= MAX_LAMBDA {
                let mut a = h.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * h[(i, i)].max(1e-9);
                }
                let Some(chol) = a.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let dx = -chol.solve(&g);
                small_step = dx.norm() < config.step_tolerance;
                let candidate = apply_step(&self.states, &dx);
                let new_cost = match self.linearize_all(&candidate) {
                    Ok(l) => {
                        let c: f64 = l.iter().map(|x| x.cost).sum();
                        if c.is_finite() && c <= cost {
                            assert!(c <= cost, "accepted step increased the cost");
                            lins = l;
                            Some(c)
                        } else {
                            None
                        }
                    }
                    Err(Error::NonFiniteResidual(_)) => None,
                    Err(e) => return Err(e),
                };
                match new_cost {
                    Some(c) => {
                        self.states = candidate;
                        cost = c;
                        lambda = (lambda * 0.5).max(1e-12);
                        accepted = true;
                        break;
                    }
                    None if small_step => break,
                    None => lambda *= 10.0,
                }
            }
            if lambda > MAX_LAMBDA {
                let (h, _) = self.normal_equations(&lins);
                return Err(Error::DegenerateGeometry(rank_diagnostic(&h, &self.ids)));
            }
            if small_step {
                break if accepted { Termination::Step } else { Termination::NoProgress };
            }
        };
        // Surface non-finite residuals at the final estimate with the offending factor.
        let lins = self.linearize_all(&self.states)?;
        let rank_deficiency = check_rank(&self.normal_equations(&lins).0, &self.ids);
        if let Some(msg) = &rank_deficiency {
            log::warn!("{msg}");
        }
        Ok(ConvergenceReport { iterations, initial_cost, final_cost: cost, termination, rank_deficiency })
    }
}
