//! Factor types of the sliding-window graph and their whitened
//! linearizations.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geodesy::FrameSet;
use crate::gnss::{
    clock_drift_residual_with_jacobian, pseudorange_residual_with_jacobian, tdcp_residual_with_jacobian, SatelliteObservation,
    SatelliteState, TdcpMeasurement,
};
use crate::imu::PreintegratedImu;
use crate::math::right_jacobian_inv;
use crate::radar::PreintegratedRadarVelocity;
use crate::robust::gmm::{gmm_cost, gmm_curvature, GmmNoiseModel};
use crate::state::{NavState, IDX_THETA, STATE_DIM};

pub type StateId = u64;

pub type Matrix17 = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Prior,
    Imu,
    RadarVelocity,
    ClockDrift,
    Tdcp,
    Pseudorange,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudorangeNoise {
    Gaussian { sigma: f64 },
    Mixture(GmmNoiseModel),
}

#[derive(Debug, Clone)]
pub enum Factor {
    /// Gaussian prior on one state in local coordinates around `mean`.
    Prior { state: StateId, mean: NavState, sqrt_information: Matrix17 },
    Imu { from: StateId, to: StateId, preintegration: PreintegratedImu, sqrt_information: SMatrix<f64, 15, 15>, gravity: Vector3<f64> },
    RadarVelocity { from: StateId, to: StateId, preintegration: PreintegratedRadarVelocity, sqrt_information: SMatrix<f64, 3, 3> },
    ClockDrift { from: StateId, to: StateId, dt: f64, sigma_bias: f64, sigma_drift: f64 },
    Tdcp { from: StateId, to: StateId, measurement: TdcpMeasurement, satellites: (SatelliteState, SatelliteState), sigma: f64 },
    Pseudorange { state: StateId, observation: SatelliteObservation, satellite: SatelliteState, noise: PseudorangeNoise },
    /// Whitened linear constraint `r + J·(x ⊟ x_lin)` over several states,
    /// e.g. the prior left behind by marginalization.
    Linear { states: Vec<StateId>, linearization: Vec<NavState>, jacobian: DMatrix<f64>, residual: DVector<f64> },
}

/// Whitened residual and Jacobian blocks. For Gaussian factors
/// `cost = ½‖residual‖²`; robust factors carry an equivalent least-squares
/// form whose gradient and curvature match the robust cost.
#[derive(Debug, Clone)]
pub struct FactorLinearization {
    pub cost: f64,
    pub residual: DVector<f64>,
    pub blocks: Vec<(StateId, DMatrix<f64>)>,
}

/// Square-root information `A` with `AᵀA = Σ⁻¹`, robust to tiny eigenvalues.
pub fn sqrt_information(covariance: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (covariance + covariance.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = (max * 1e-14).max(1e-300);
    let scale = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|s| 1.0 / s.max(floor).sqrt()));
    DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose()
}

pub fn sqrt_information_fixed<const N: usize>(covariance: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let d = sqrt_information(&DMatrix::from_iterator(N, N, covariance.iter().cloned()));
    SMatrix::<f64, N, N>::from_iterator(d.iter().cloned())
}

fn gaussian(residual: DVector<f64>, blocks: Vec<(StateId, DMatrix<f64>)>) -> FactorLinearization {
    FactorLinearization { cost: 0.5 * residual.norm_squared(), residual, blocks }
}

fn dyn_of<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_iterator(R, C, m.iter().cloned())
}

/// Derivative of `x ⊟ x_lin` with respect to a local increment of `x`.
pub fn ominus_jacobian(x: &NavState, x_lin: &NavState) -> DMatrix<f64> {
    let mut d = DMatrix::identity(STATE_DIM, STATE_DIM);
    let phi = x.ominus(x_lin).fixed_rows::<3>(IDX_THETA).into_owned();
    d.view_mut((IDX_THETA, IDX_THETA), (3, 3)).copy_from(&right_jacobian_inv(&phi));
    d
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { .. } => FactorKind::Prior,
            Factor::Imu { .. } => FactorKind::Imu,
            Factor::RadarVelocity { .. } => FactorKind::RadarVelocity,
            Factor::ClockDrift { .. } => FactorKind::ClockDrift,
            Factor::Tdcp { .. } => FactorKind::Tdcp,
            Factor::Pseudorange { .. } => FactorKind::Pseudorange,
            Factor::Linear { .. } => FactorKind::Linear,
        }
    }

    pub fn states(&self) -> Vec<StateId> {
        match self {
            Factor::Prior { state, .. } | Factor::Pseudorange { state, .. } => vec![*state],
            Factor::Imu { from, to, .. }
            | Factor::RadarVelocity { from, to, .. }
            | Factor::ClockDrift { from, to, .. }
            | Factor::Tdcp { from, to, .. } => vec![*from, *to],
            Factor::Linear { states, .. } => states.clone(),
        }
    }

    pub fn touches(&self, id: StateId) -> bool {
        self.states().contains(&id)
    }

    pub fn describe(&self) -> String {
        let ids = self.states();
        match self {
            Factor::Tdcp { measurement, .. } => format!("tdcp(sat {}, states {:?})", measurement.sat_id, ids),
            Factor::Pseudorange { observation, .. } => format!("pseudorange(sat {}, state {:?})", observation.sat_id, ids),
            other => format!("{:?}(states {:?})", other.kind(), ids).to_lowercase(),
        }
    }

    pub fn linearize<'a>(&self, state: &impl Fn(StateId) -> &'a NavState, frames: &FrameSet) -> Result<FactorLinearization> {
        let lin = match self {
            Factor::Prior { state: id, mean, sqrt_information } => {
                let x = state(*id);
                let r = sqrt_information * x.ominus(mean);
                let j = dyn_of(sqrt_information) * ominus_jacobian(x, mean);
                gaussian(DVector::from_column_slice(r.as_slice()), vec![(*id, j)])
            }
            Factor::Imu { from, to, preintegration, sqrt_information, gravity } => {
                let (r, ji, jj) = preintegration.evaluate(state(*from), state(*to), gravity);
                gaussian(
                    DVector::from_column_slice((sqrt_information * r).as_slice()),
                    vec![(*from, dyn_of(&(sqrt_information * ji))), (*to, dyn_of(&(sqrt_information * jj)))],
                )
            }
            Factor::RadarVelocity { from, to, preintegration, sqrt_information } => {
                let (r, ji, jj) = preintegration.evaluate(state(*from), state(*to));
                gaussian(
                    DVector::from_column_slice((sqrt_information * r).as_slice()),
                    vec![(*from, dyn_of(&(sqrt_information * ji))), (*to, dyn_of(&(sqrt_information * jj)))],
                )
            }
            Factor::ClockDrift { from, to, dt, sigma_bias, sigma_drift } => {
                let (r, mut ji, mut jj) = clock_drift_residual_with_jacobian(state(*from), state(*to), *dt);
                let w = [1.0 / sigma_bias, 1.0 / sigma_drift];
                let mut rw = r;
                for k in 0..2 {
                    rw[k] *= w[k];
                    ji.row_mut(k).scale_mut(w[k]);
                    jj.row_mut(k).scale_mut(w[k]);
                }
                gaussian(DVector::from_column_slice(rw.as_slice()), vec![(*from, dyn_of(&ji)), (*to, dyn_of(&jj))])
            }
            Factor::Tdcp { from, to, measurement, satellites, sigma } => {
                let (r, ji, jj) =
                    tdcp_residual_with_jacobian(measurement, (&satellites.0, &satellites.1), state(*from), state(*to), frames)?;
                gaussian(DVector::from_element(1, r / sigma), vec![(*from, dyn_of(&(ji / *sigma))), (*to, dyn_of(&(jj / *sigma)))])
            }
            Factor::Pseudorange { state: id, observation, satellite, noise } => {
                let (r, j) = pseudorange_residual_with_jacobian(observation, satellite, state(*id), frames);
                match noise {
                    PseudorangeNoise::Gaussian { sigma } => gaussian(DVector::from_element(1, r / sigma), vec![(*id, dyn_of(&(j / *sigma)))]),
                    PseudorangeNoise::Mixture(model) => {
                        let (cost, grad) = gmm_cost(r, model);
                        let curvature = gmm_curvature(r, model);
                        let s = curvature.sqrt();
                        FactorLinearization { cost, residual: DVector::from_element(1, grad / s), blocks: vec![(*id, dyn_of(&(j * s)))] }
                    }
                }
            }
            Factor::Linear { states, linearization, jacobian, residual } => {
                let mut dx = DVector::zeros(STATE_DIM * states.len());
                let mut blocks = Vec::with_capacity(states.len());
                for (k, (id, x_lin)) in states.iter().zip(linearization).enumerate() {
                    let x = state(*id);
                    dx.rows_mut(k * STATE_DIM, STATE_DIM).copy_from(&x.ominus(x_lin));
                    let jk = jacobian.columns(k * STATE_DIM, STATE_DIM) * ominus_jacobian(x, x_lin);
                    blocks.push((*id, jk));
                }
                gaussian(residual + jacobian * dx, blocks)
            }
        };
        if !lin.cost.is_finite() || lin.residual.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual(self.describe()));
        }
        Ok(lin)
    }
}
