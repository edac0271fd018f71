//! Small SO(3) toolkit: hat operator, exponential/logarithm maps and the
//! right Jacobians used for on-manifold perturbations `q ⊗ Exp(δθ)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

const SMALL_ANGLE: f64 = 1e-5;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn exp_so3(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    if theta < SMALL_ANGLE {
        // Taylor expansion keeps the map smooth near identity.
        let half = 0.5 - theta * theta / 48.0;
        let w = 1.0 - theta * theta / 8.0;
        return UnitQuaternion::new_normalize(Quaternion::new(w, half * phi.x, half * phi.y, half * phi.z));
    }
    let s = (0.5 * theta).sin() / theta;
    UnitQuaternion::new_unchecked(Quaternion::new((0.5 * theta).cos(), s * phi.x, s * phi.y, s * phi.z))
}

/// Logarithm map, returning the rotation vector with angle in `[0, π]`.
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < SMALL_ANGLE {
        // atan2(n, w) / n ≈ (1 - n²/(3w²)) / w
        return v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
    }
    v * (2.0 * n.atan2(w) / n)
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let t2 = theta * theta;
    let c = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + c * k * k
}

/// Spherical interpolation between two unit quaternions, `s ∈ [0, 1]`.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let delta = log_so3(&(a.inverse() * b));
    a * exp_so3(&(delta * s))
}

/// Roll, pitch, yaw (intrinsic z-y-x) of a body-to-ENU rotation.
pub fn euler_angles(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (r, p, y) = q.euler_angles();
    Vector3::new(r, p, y)
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}
