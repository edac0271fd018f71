//! Schur-complement marginalization of the oldest window state into a
//! linear prior.

use nalgebra::{DMatrix, DVector};

use super::factor::{Factor, StateId};
use super::problem::Problem;
use crate::error::{Error, Result};
use crate::state::STATE_DIM;

const EIGEN_EPS: f64 = 1e-10;

/// Dense prior `(J, r)` with `JᵀJ = H` and `Jᵀr = g` from the information
/// form. Negative eigenvalues from round-off are clamped at zero.
pub fn prior_from_information(h: &DMatrix<f64>, g: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -EIGEN_EPS * smax.max(1.0) {
        log::warn!("marginal information lost positive semidefiniteness (eigenvalue {min:.3e}); clamping");
    }
    let n = h.nrows();
    let mut s_sqrt = DVector::zeros(n);
    let mut s_inv_sqrt = DVector::zeros(n);
    for (i, s) in eig.eigenvalues.iter().enumerate() {
        if *s > EIGEN_EPS * smax.max(1e-300) {
            s_sqrt[i] = s.sqrt();
            s_inv_sqrt[i] = 1.0 / s.sqrt();
        }
    }
    let ut = eig.eigenvectors.transpose();
    let j = DMatrix::from_diagonal(&s_sqrt) * &ut;
    let r = DMatrix::from_diagonal(&s_inv_sqrt) * (&ut * g);
    (j, r)
}

/// Pseudo-inverse of a symmetric PSD matrix.
fn psd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|s| if *s > EIGEN_EPS * smax.max(1e-300) { 1.0 / s } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

impl Problem {
    /// Removes the oldest state. Factors touching it are linearized at the
    /// current estimate and condensed into one linear prior on the
    /// remaining states they involve.
    pub fn marginalize_oldest(&mut self) -> Result<()> {
        let Some(&oldest) = self.ids.first() else {
            return Err(Error::NotInitialized);
        };
        let (touching, keep): (Vec<Factor>, Vec<Factor>) = self.factors.drain(..).partition(|f| f.touches(oldest));
        self.factors = keep;

        let mut others: Vec<StateId> = touching.iter().flat_map(|f| f.states()).filter(|id| *id != oldest).collect();
        others.sort_unstable();
        others.dedup();

        let order: Vec<StateId> = std::iter::once(oldest).chain(others.iter().copied()).collect();
        let n = order.len() * STATE_DIM;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let lookup = |id: StateId| &self.states[self.index_of(id).expect("factor state in window")];
        for f in &touching {
            let lin = f.linearize(&lookup, &self.frames)?;
            for (ia, ja) in &lin.blocks {
                let a = order.iter().position(|x| x == ia).unwrap() * STATE_DIM;
                let jat = ja.transpose();
                g.rows_mut(a, STATE_DIM).axpy(1.0, &(&jat * &lin.residual), 1.0);
                for (ib, jb) in &lin.blocks {
                    let b = order.iter().position(|x| x == ib).unwrap() * STATE_DIM;
                    let mut blk = h.view_mut((a, b), (STATE_DIM, STATE_DIM));
                    blk += &jat * jb;
                }
            }
        }

        self.ids.remove(0);
        self.states.remove(0);
        if others.is_empty() {
            return Ok(());
        }

        let m = STATE_DIM;
        let r = n - m;
        let hmm = h.view((0, 0), (m, m)).into_owned();
        let hmr = h.view((0, m), (m, r)).into_owned();
        let hrr = h.view((m, m), (r, r)).into_owned();
        let hmm_inv = psd_inverse(&hmm);
        let h_prior = &hrr - hmr.transpose() * &hmm_inv * &hmr;
        let g_prior = g.rows(m, r) - hmr.transpose() * &hmm_inv * g.rows(0, m);
        let (jacobian, residual) = prior_from_information(&h_prior, &g_prior);
        let linearization = others.iter().map(|id| *self.state(*id).unwrap()).collect();
        self.factors.push(Factor::Linear { states: others, linearization, jacobian, residual });
        Ok(())
    }
}
