//! WGS-84 frame conventions and per-satellite geometry.
//!
//! Positions estimated by the backend live in a local ENU frame anchored at
//! a geodetic origin. GNSS models work in ECEF, so every conversion between
//! the two goes through a [`FrameSet`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WGS84_A: f64 = 6378137.0;
pub const WGS84_F: f64 = 1.0 / 298.257223563;
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
pub const OMEGA_EARTH: f64 = 7.2921151467e-5;
pub const SPEED_OF_LIGHT: f64 = 299792458.0;

pub fn wgs84_b() -> f64 {
    WGS84_A * (1.0 - WGS84_E2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPoint {
    /// radians
    pub latitude: f64,
    /// radians, wrapped to (−π, π]
    pub longitude: f64,
    /// meters above the ellipsoid
    pub height: f64,
}

impl GeodeticPoint {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        if !(latitude.is_finite() && longitude.is_finite() && height.is_finite()) {
            return Err(Error::InvalidArgument("geodetic coordinates must be finite".into()));
        }
        if latitude.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidArgument(format!("latitude {latitude} outside [-π/2, π/2]")));
        }
        Ok(Self { latitude, longitude: crate::math::wrap_angle(longitude), height })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }
}

pub fn geodetic_to_ecef(p: &GeodeticPoint) -> Vector3<f64> {
    let (slat, clat) = p.latitude.sin_cos();
    let (slon, clon) = p.longitude.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
    Vector3::new(
        (n + p.height) * clat * clon,
        (n + p.height) * clat * slon,
        (n * (1.0 - WGS84_E2) + p.height) * slat,
    )
}

/// Iterative inverse of [`geodetic_to_ecef`]; converges to well below a
/// micrometer for terrestrial and orbital heights.
pub fn ecef_to_geodetic(x: &Vector3<f64>) -> GeodeticPoint {
    let p = (x.x * x.x + x.y * x.y).sqrt();
    let lon = x.y.atan2(x.x);
    if p < 1e-9 {
        let lat = if x.z >= 0.0 { std::f64::consts::FRAC_PI_2 } else { -std::f64::consts::FRAC_PI_2 };
        return GeodeticPoint { latitude: lat, longitude: lon, height: x.z.abs() - wgs84_b() };
    }
    let mut lat = x.z.atan2(p * (1.0 - WGS84_E2));
    let mut h = 0.0;
    for _ in 0..10 {
        let s = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
        h = p / lat.cos() - n;
        let next = x.z.atan2(p * (1.0 - WGS84_E2 * n / (n + h)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let s = lat.sin();
    let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
    // Height from the better-conditioned projection for high latitudes.
    if lat.abs() > 1.0 {
        h = x.z / s - n * (1.0 - WGS84_E2);
    }
    GeodeticPoint { latitude: lat, longitude: lon, height: h }
}

/// Columns are the ENU axes expressed in ECEF.
pub fn rotation_ecef_from_enu(origin: &GeodeticPoint) -> Matrix3<f64> {
    let (slat, clat) = origin.latitude.sin_cos();
    let (slon, clon) = origin.longitude.sin_cos();
    Matrix3::new(
        -slon, -slat * clon, clat * clon,
        clon, -slat * slon, clat * slon,
        0.0, clat, slat,
    )
}

fn check_rotation(r: &Matrix3<f64>, name: &str) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > 1e-12 || (r.determinant() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{name} is not a proper rotation (orthonormality error {err:e})")));
    }
    Ok(())
}

/// Frame conventions shared by all models: ENU anchor, antenna lever arm and
/// radar mounting rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub enu_origin: GeodeticPoint,
    pub origin_ecef: Vector3<f64>,
    pub rotation_ecef_from_enu: Matrix3<f64>,
    pub lever_arm_gnss: Vector3<f64>,
    pub rotation_body_from_radar: Matrix3<f64>,
}

impl FrameSet {
    pub fn new(
        enu_origin: GeodeticPoint,
        lever_arm_gnss: Vector3<f64>,
        rotation_body_from_radar: Matrix3<f64>,
    ) -> Result<Self> {
        if !lever_arm_gnss.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("lever arm must be finite".into()));
        }
        check_rotation(&rotation_body_from_radar, "rotation_body_from_radar")?;
        let rotation_ecef_from_enu = rotation_ecef_from_enu(&enu_origin);
        check_rotation(&rotation_ecef_from_enu, "rotation_ecef_from_enu")?;
        Ok(Self {
            enu_origin,
            origin_ecef: geodetic_to_ecef(&enu_origin),
            rotation_ecef_from_enu,
            lever_arm_gnss,
            rotation_body_from_radar,
        })
    }

    /// Same mounting, different ENU anchor.
    pub fn with_origin(&self, enu_origin: GeodeticPoint) -> Self {
        Self::new(enu_origin, self.lever_arm_gnss, self.rotation_body_from_radar)
            .expect("mounting already validated")
    }

    pub fn ecef_to_enu(&self, p_ecef: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_ecef_from_enu.transpose() * (p_ecef - self.origin_ecef)
    }

    pub fn enu_to_ecef(&self, p_enu: &Vector3<f64>) -> Vector3<f64> {
        self.origin_ecef + self.rotation_ecef_from_enu * p_enu
    }

    /// ENU offset rotated into ECEF axes, without adding the origin. Keeps
    /// small offsets at full precision.
    pub fn enu_offset_to_ecef(&self, d_enu: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_ecef_from_enu * d_enu
    }
}

pub fn ecef_to_enu(p_ecef: &Vector3<f64>, frames: &FrameSet) -> Vector3<f64> {
    frames.ecef_to_enu(p_ecef)
}

pub fn enu_to_ecef(p_enu: &Vector3<f64>, frames: &FrameSet) -> Vector3<f64> {
    frames.enu_to_ecef(p_enu)
}

/// Sagnac range correction for a signal from `p_sat` to `p_rcv` (ECEF, m).
pub fn sagnac_correction(p_sat: &Vector3<f64>, p_rcv: &Vector3<f64>) -> f64 {
    OMEGA_EARTH / SPEED_OF_LIGHT * (p_sat.x * p_rcv.y - p_sat.y * p_rcv.x)
}

/// Elevation and azimuth (radians, azimuth clockwise from north) of a
/// satellite seen from a receiver.
pub fn elevation_azimuth(p_sat: &Vector3<f64>, p_rcv: &Vector3<f64>) -> Result<(f64, f64)> {
    let los = p_sat - p_rcv;
    let range = los.norm();
    if range < 1e-6 {
        return Err(Error::DegenerateGeometry("satellite and receiver positions coincide".into()));
    }
    let local = rotation_ecef_from_enu(&ecef_to_geodetic(p_rcv)).transpose() * (los / range);
    let elevation = local.z.clamp(-1.0, 1.0).asin();
    let azimuth = local.x.atan2(local.y);
    Ok((elevation, azimuth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frames_at(lat: f64, lon: f64, h: f64) -> FrameSet {
        FrameSet::new(GeodeticPoint::new(lat, lon, h).unwrap(), Vector3::zeros(), Matrix3::identity()).unwrap()
    }

    #[test]
    fn equator_and_pole() {
        let p = geodetic_to_ecef(&GeodeticPoint::new(0.0, 0.0, 0.0).unwrap());
        assert_relative_eq!(p, Vector3::new(WGS84_A, 0.0, 0.0), epsilon = 1e-9);
        let p = geodetic_to_ecef(&GeodeticPoint::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0).unwrap());
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9);
        assert_relative_eq!(p.z, wgs84_b(), epsilon = 1e-9);
    }

    #[test]
    fn mid_latitude_reference_value() {
        // Independently evaluated textbook formula.
        let p = geodetic_to_ecef(&GeodeticPoint::new(0.5486, 2.1201, 20.0).unwrap());
        assert_relative_eq!(p, Vector3::new(-2843925.56348965, 4645817.1332531115, 3306910.4433495775), epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_latitude() {
        assert!(GeodeticPoint::new(1.6, 0.0, 0.0).is_err());
        let g = GeodeticPoint::new(0.1, 3.5, 0.0).unwrap();
        assert!(g.longitude <= std::f64::consts::PI && g.longitude > -std::f64::consts::PI);
    }

    #[test]
    fn enu_origin_and_east_step() {
        let f = frames_at(0.5486, 2.1201, 20.0);
        assert_relative_eq!(f.ecef_to_enu(&f.origin_ecef), Vector3::zeros(), epsilon = 1e-9);
        // 100 m along the parallel, from the prime-vertical radius of curvature.
        let s = f.enu_origin.latitude.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
        let dlon = 100.0 / ((n + 20.0) * f.enu_origin.latitude.cos());
        let east = GeodeticPoint::new(f.enu_origin.latitude, f.enu_origin.longitude + dlon, 20.0).unwrap();
        let e = f.ecef_to_enu(&geodetic_to_ecef(&east));
        assert_relative_eq!(e, Vector3::new(100.0, 0.0, 0.0), epsilon = 1e-3);
    }

    #[test]
    fn rotation_orthonormal() {
        let f = frames_at(-0.9, -2.0, 300.0);
        let r = f.rotation_ecef_from_enu;
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn frameset_rejects_non_rotation() {
        let g = GeodeticPoint::new(0.5, 0.5, 0.0).unwrap();
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(FrameSet::new(g, Vector3::zeros(), bad).is_err());
    }

    #[test]
    fn sagnac_cases() {
        let zero = Vector3::zeros();
        assert_eq!(sagnac_correction(&Vector3::new(2e7, 1e7, 5e6), &zero), 0.0);
        assert_eq!(sagnac_correction(&Vector3::new(2e7, 0.0, 0.0), &Vector3::new(6e6, 0.0, 0.0)), 0.0);
        let v = sagnac_correction(&Vector3::new(2.0e7, 1.0e7, 0.0), &Vector3::new(6.0e6, 1.0e6, 0.0));
        assert_relative_eq!(v, -9.729551163958902, epsilon = 1e-6);
    }

    #[test]
    fn elevation_cases() {
        let g = GeodeticPoint::new(0.5486, 2.1201, 20.0).unwrap();
        let rcv = geodetic_to_ecef(&g);
        let up = rotation_ecef_from_enu(&g).column(2).into_owned();
        let (el, _) = elevation_azimuth(&(rcv + up * 2.0e7), &rcv).unwrap();
        assert_relative_eq!(el, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        let east = rotation_ecef_from_enu(&g).column(0).into_owned();
        let (el, az) = elevation_azimuth(&(rcv + east * 2.0e7), &rcv).unwrap();
        assert!(el.abs() < 1e-9);
        assert_relative_eq!(az, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        // Independent ENU rotation script.
        let (el, az) = elevation_azimuth(&Vector3::new(-1.5e7, 1.8e7, 1.2e7), &rcv).unwrap();
        assert_relative_eq!(el, 1.377075978968541, epsilon = 1e-9);
        assert_relative_eq!(az, 2.065530958314806, epsilon = 1e-9);
        assert!(elevation_azimuth(&rcv, &rcv).is_err());
    }

    #[test]
    fn enu_round_trip_1000_points() {
        use rand::{Rng, SeedableRng};
        let f = frames_at(0.7, -1.3, 150.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = Vector3::new(rng.random_range(-5e4..5e4), rng.random_range(-5e4..5e4), rng.random_range(-500.0..500.0));
            let back = f.ecef_to_enu(&f.enu_to_ecef(&d));
            assert!((back - d).norm() < 1e-9, "{back} vs {d}");
        }
    }

    proptest! {
        #[test]
        fn geodetic_round_trip(lat in -1.55f64..1.55, lon in -3.14f64..3.14, h in -500.0f64..3.0e7) {
            let g = GeodeticPoint::new(lat, lon, h).unwrap();
            let x = geodetic_to_ecef(&g);
            let back = geodetic_to_ecef(&ecef_to_geodetic(&x));
            prop_assert!((back - x).norm() < 1e-6);
        }

        #[test]
        fn sagnac_antisymmetric(a in -3e7f64..3e7, b in -3e7f64..3e7, c in -7e6f64..7e6, d in -7e6f64..7e6) {
            let s = Vector3::new(a, b, 0.0);
            let r = Vector3::new(c, d, 0.0);
            prop_assert!((sagnac_correction(&s, &r) + sagnac_correction(&r, &s)).abs() < 1e-12);
        }
    }
}
