use nalgebra::{SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::{exp_so3, log_so3};

/// Dimension of the local increment of one [`NavState`].
pub const STATE_DIM: usize = 17;

pub const IDX_P: usize = 0;
pub const IDX_V: usize = 3;
pub const IDX_THETA: usize = 6;
pub const IDX_BA: usize = 9;
pub const IDX_BG: usize = 12;
pub const IDX_CLOCK: usize = 15;
pub const IDX_DRIFT: usize = 16;

/// Local increment `(δp, δv, δθ, δb_a, δb_ω, δt, δṫ)`.
pub type LocalIncrement = SVector<f64, STATE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }

    /// Largest absolute component of the difference, mixed units.
    pub fn max_abs_delta(&self, other: &ImuBias) -> f64 {
        (self.accel - other.accel).amax().max((self.gyro - other.gyro).amax())
    }

    pub fn is_sane(&self, accel_bound: f64, gyro_bound: f64) -> bool {
        self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
            && self.accel.norm() < accel_bound
            && self.gyro.norm() < gyro_bound
    }
}

/// One sliding-window node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub timestamp: f64,
    /// ENU, meters
    pub position: Vector3<f64>,
    /// ENU, m/s
    pub velocity: Vector3<f64>,
    /// Body-to-ENU rotation.
    pub orientation: UnitQuaternion<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// meters
    pub clock_bias: f64,
    /// m/s
    pub clock_drift: f64,
}

impl NavState {
    pub fn at_rest(timestamp: f64) -> Self {
        Self {
            timestamp,
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            clock_bias: 0.0,
            clock_drift: 0.0,
        }
    }

    pub fn bias(&self) -> ImuBias {
        ImuBias::new(self.accel_bias, self.gyro_bias)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.accel_bias.iter()).chain(self.gyro_bias.iter()).all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.clock_bias.is_finite()
            && self.clock_drift.is_finite()
    }

    /// `x ⊞ δ`: rotation updated on the right through the exponential map,
    /// everything else additively.
    pub fn oplus(&self, d: &LocalIncrement) -> NavState {
        let mut q = self.orientation * exp_so3(&d.fixed_rows::<3>(IDX_THETA).into_owned());
        q.renormalize();
        NavState {
            timestamp: self.timestamp,
            position: self.position + d.fixed_rows::<3>(IDX_P),
            velocity: self.velocity + d.fixed_rows::<3>(IDX_V),
            orientation: q,
            accel_bias: self.accel_bias + d.fixed_rows::<3>(IDX_BA),
            gyro_bias: self.gyro_bias + d.fixed_rows::<3>(IDX_BG),
            clock_bias: self.clock_bias + d[IDX_CLOCK],
            clock_drift: self.clock_drift + d[IDX_DRIFT],
        }
    }

    /// `self ⊟ reference`, the inverse of [`NavState::oplus`].
    pub fn ominus(&self, reference: &NavState) -> LocalIncrement {
        let mut d = LocalIncrement::zeros();
        d.fixed_rows_mut::<3>(IDX_P).copy_from(&(self.position - reference.position));
        d.fixed_rows_mut::<3>(IDX_V).copy_from(&(self.velocity - reference.velocity));
        d.fixed_rows_mut::<3>(IDX_THETA).copy_from(&log_so3(&(reference.orientation.inverse() * self.orientation)));
        d.fixed_rows_mut::<3>(IDX_BA).copy_from(&(self.accel_bias - reference.accel_bias));
        d.fixed_rows_mut::<3>(IDX_BG).copy_from(&(self.gyro_bias - reference.gyro_bias));
        d[IDX_CLOCK] = self.clock_bias - reference.clock_bias;
        d[IDX_DRIFT] = self.clock_drift - reference.clock_drift;
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn oplus_ominus_inverse(v in proptest::collection::vec(-0.5f64..0.5, STATE_DIM)) {
            let mut x = NavState::at_rest(1.0);
            x.orientation = UnitQuaternion::from_euler_angles(0.1, -0.2, 2.0);
            x.clock_bias = 1234.5;
            let d = LocalIncrement::from_column_slice(&v);
            let y = x.oplus(&d);
            prop_assert!((y.orientation.norm() - 1.0).abs() < 1e-12);
            let back = y.ominus(&x);
            prop_assert!((back - d).amax() < 1e-10);
        }
    }
}
