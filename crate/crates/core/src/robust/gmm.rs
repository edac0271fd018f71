use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible component variance, m².
pub const VARIANCE_FLOOR: f64 = 1e-4;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Two-component 1-D Gaussian mixture over pseudorange residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmNoiseModel {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
}

impl GmmNoiseModel {
    pub fn new(weights: [f64; 2], means: [f64; 2], variances: [f64; 2]) -> Result<Self> {
        let m = Self { weights, means, variances };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.weights[0] + self.weights[1];
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::InvalidArgument(format!("mixture weights {:?} invalid", self.weights)));
        }
        if self.variances.iter().any(|v| !(*v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("mixture variances {:?} below floor", self.variances)));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("mixture means must be finite".into()));
        }
        Ok(())
    }

    /// Degenerate mixture equivalent to a single zero-mean Gaussian.
    pub fn single(sigma: f64) -> Self {
        let v = (sigma * sigma).max(VARIANCE_FLOOR);
        Self { weights: [0.5, 0.5], means: [0.0, 0.0], variances: [v, v] }
    }

    /// Initial guess from data: the inner 80% quantile gives the nominal
    /// component; the second shares its mean with ten times the variance.
    pub fn initial_guess(residuals: &[f64]) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::EmptyInput("no residuals for mixture initialization".into()));
        }
        let mut sorted = residuals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let lo = n / 10;
        let hi = (n - n / 10).max(lo + 1);
        let inner = &sorted[lo..hi];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        let var = (inner.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / inner.len() as f64).max(VARIANCE_FLOOR);
        Ok(Self { weights: [0.8, 0.2], means: [mean, mean], variances: [var, 10.0 * var] })
    }

    fn log_component(&self, j: usize, r: f64) -> f64 {
        let d = r - self.means[j];
        self.weights[j].ln() - LN_SQRT_2PI - 0.5 * self.variances[j].ln() - 0.5 * d * d / self.variances[j]
    }

    /// Log-density and component responsibilities at `r`.
    pub fn log_density_and_responsibilities(&self, r: f64) -> (f64, [f64; 2]) {
        let l = [self.log_component(0, r), self.log_component(1, r)];
        let m = l[0].max(l[1]);
        let e = [(l[0] - m).exp(), (l[1] - m).exp()];
        let s = e[0] + e[1];
        (m + s.ln(), [e[0] / s, e[1] / s])
    }

    pub fn log_likelihood(&self, residuals: &[f64]) -> f64 {
        residuals.iter().map(|r| self.log_density_and_responsibilities(*r).0).sum()
    }

    /// Index of the component with the smaller variance.
    pub fn narrow_component(&self) -> usize {
        usize::from(self.variances[1] < self.variances[0])
    }

    fn log_peak_sum(&self) -> f64 {
        let l = [
            self.weights[0].ln() - LN_SQRT_2PI - 0.5 * self.variances[0].ln(),
            self.weights[1].ln() - LN_SQRT_2PI - 0.5 * self.variances[1].ln(),
        ];
        let m = l[0].max(l[1]);
        m + ((l[0] - m).exp() + (l[1] - m).exp()).ln()
    }
}

/// Sum-mixture negative log-likelihood, offset so it is never negative, and
/// its derivative with respect to the residual.
pub fn gmm_cost(residual: f64, model: &GmmNoiseModel) -> (f64, f64) {
    let (ld, p) = model.log_density_and_responsibilities(residual);
    let cost = model.log_peak_sum() - ld;
    let grad = (0..2).map(|j| p[j] * (residual - model.means[j]) / model.variances[j]).sum();
    (cost, grad)
}

/// Positive curvature surrogate `Σ p_j/σ_j²` used as the Gauss–Newton
/// weight of the mixture cost.
pub fn gmm_curvature(residual: f64, model: &GmmNoiseModel) -> f64 {
    let (_, p) = model.log_density_and_responsibilities(residual);
    p[0] / model.variances[0] + p[1] / model.variances[1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmNoiseModel,
    pub iterations: usize,
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

const WEIGHT_MIN: f64 = 1e-6;

/// Expectation–maximization for the two-component mixture. Stops when the
/// log-likelihood gain drops below `tol` or after `max_iters`. Variances are
/// clamped at [`VARIANCE_FLOOR`]; the log-likelihood is asserted never to
/// decrease.
pub fn fit_gmm(residuals: &[f64], init: &GmmNoiseModel, max_iters: usize, tol: f64) -> Result<GmmFit> {
    if residuals.is_empty() {
        return Err(Error::EmptyInput("no residuals to fit".into()));
    }
    init.validate()?;
    let n = residuals.len() as f64;
    let mut model = *init;
    let mut ll = model.log_likelihood(residuals);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut nk = [0.0; 2];
        let mut sum = [0.0; 2];
        let resp: Vec<[f64; 2]> = residuals.iter().map(|r| model.log_density_and_responsibilities(*r).1).collect();
        for (r, p) in residuals.iter().zip(&resp) {
            for j in 0..2 {
                nk[j] += p[j];
                sum[j] += p[j] * r;
            }
        }
        let mut next = model;
        let mut clamped = false;
        for j in 0..2 {
            if nk[j] <= 0.0 {
                clamped = true;
                continue;
            }
            next.means[j] = sum[j] / nk[j];
            let ss: f64 = residuals.iter().zip(&resp).map(|(r, p)| p[j] * (r - next.means[j]).powi(2)).sum();
            next.variances[j] = (ss / nk[j]).max(VARIANCE_FLOOR);
        }
        let w0 = (nk[0] / n).clamp(WEIGHT_MIN, 1.0 - WEIGHT_MIN);
        clamped |= w0 != nk[0] / n;
        next.weights = [w0, 1.0 - w0];

        let next_ll = next.log_likelihood(residuals);
        if !clamped {
            assert!(
                next_ll >= ll - 1e-9 * (1.0 + ll.abs()),
                "EM log-likelihood decreased from {ll} to {next_ll}"
            );
        }
        model = next;
        history.push(next_ll);
        let gain = next_ll - ll;
        ll = next_ll;
        if gain.abs() < tol {
            converged = true;
            break;
        }
    }
    Ok(GmmFit { model, iterations, log_likelihoods: history, converged })
}

/// Maximum-likelihood single Gaussian, written as a degenerate mixture.
pub fn fit_single(residuals: &[f64]) -> Result<GmmNoiseModel> {
    if residuals.is_empty() {
        return Err(Error::EmptyInput("no residuals to fit".into()));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
    GmmNoiseModel::new([0.5, 0.5], [mean, mean], [var, var])
}

/// Result of choosing between one and two components.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub model: GmmNoiseModel,
    /// Whether the two-component fit was kept.
    pub mixture: bool,
    pub em_iterations: usize,
}

/// Fits both a single Gaussian and the two-component mixture and keeps the
/// mixture only when the Bayesian information criterion prefers it (three
/// extra parameters).
pub fn select_noise_model(residuals: &[f64], max_iters: usize, tol: f64) -> Result<ModelSelection> {
    let single = fit_single(residuals)?;
    let fit = fit_gmm(residuals, &GmmNoiseModel::initial_guess(residuals)?, max_iters, tol)?;
    let n = residuals.len() as f64;
    let gain = fit.model.log_likelihood(residuals) - single.log_likelihood(residuals);
    let mixture = 2.0 * gain > 3.0 * n.ln();
    Ok(ModelSelection { model: if mixture { fit.model } else { single }, mixture, em_iterations: fit.iterations })
}
