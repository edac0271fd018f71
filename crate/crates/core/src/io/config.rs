//! Run configuration. Every field has a default; unknown keys are rejected.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::backend::{InitConfig, LmConfig, FactorNoise};
use crate::error::{Error, Result};
use crate::geodesy::GeodeticPoint;
use crate::gnss::DEFAULT_ELEVATION_MASK;
use crate::imu::ImuNoise;
use crate::radar::{RadarVelocityNoise, RansacConfig};
use crate::robust::DEFAULT_SLIP_THRESHOLD;
use crate::sim::Scenario;

/// Where the local ENU frame is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginPolicy {
    /// First single-point antenna fix.
    #[default]
    FirstFix,
    /// Latitude°, longitude°, ellipsoidal height m.
    Fixed([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramesConfig {
    /// GNSS antenna position in the body frame, meters.
    pub lever_arm: [f64; 3],
    /// Radar mounting yaw relative to the body x axis, degrees.
    pub radar_yaw_deg: f64,
    pub enu_origin: OriginPolicy,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self { lever_arm: [0.2, 0.0, 1.1], radar_yaw_deg: 0.0, enu_origin: OriginPolicy::FirstFix }
    }
}

impl FramesConfig {
    pub fn lever_arm(&self) -> Vector3<f64> {
        Vector3::from(self.lever_arm)
    }

    pub fn rotation_body_from_radar(&self) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.radar_yaw_deg.to_radians()).into_inner()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    pub noise: RadarVelocityNoise,
    pub ransac: RansacConfig,
    /// Longest gap between usable speed samples that is still bridged, seconds.
    pub max_gap: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self { noise: RadarVelocityNoise::default(), ransac: RansacConfig::default(), max_gap: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnssConfig {
    pub elevation_mask_deg: f64,
    /// Cycle-slip threshold on the Doppler-predicted phase mismatch, meters.
    pub cycle_slip_threshold: f64,
    /// +1 when Doppler is the phase rate, −1 for the opposite convention.
    pub doppler_sign: f64,
}

impl Default for GnssConfig {
    fn default() -> Self {
        Self { elevation_mask_deg: DEFAULT_ELEVATION_MASK.to_degrees(), cycle_slip_threshold: DEFAULT_SLIP_THRESHOLD, doppler_sign: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    /// Number of most recent pseudorange residuals the mixture is fitted to.
    pub history: usize,
    /// Below this many residuals the Gaussian fallback is used.
    pub min_residuals: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { history: 200, min_residuals: 30, max_iterations: 100, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModelKind {
    Gaussian,
    #[default]
    Gmm,
}

impl std::str::FromStr for NoiseModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "gmm" => Ok(Self::Gmm),
            other => Err(Error::Config(format!("noise_model must be \"gaussian\" or \"gmm\", got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub enable_radar: bool,
    pub enable_tdcp: bool,
    pub noise_model: NoiseModelKind,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { enable_radar: true, enable_tdcp: true, noise_model: NoiseModelKind::Gmm }
    }
}

/// Which estimate of each state is written out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputPolicy {
    /// The last estimate before the state leaves the window (fixed lag of
    /// `window_size − 1` epochs).
    #[default]
    Lagged,
    /// The newest state right after each epoch is optimized.
    Newest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Sliding window length in GNSS epochs.
    pub window_size: usize,
    pub output: OutputPolicy,
    /// ENU gravity, m/s².
    pub gravity: [f64; 3],
    pub frames: FramesConfig,
    pub imu: ImuNoise,
    pub radar: RadarConfig,
    pub gnss: GnssConfig,
    pub noise: FactorNoise,
    pub gmm: GmmConfig,
    pub optimizer: LmConfig,
    pub init: InitConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_size: 10,
            output: OutputPolicy::Lagged,
            gravity: [0.0, 0.0, -9.81],
            frames: FramesConfig::default(),
            imu: ImuNoise::default(),
            radar: RadarConfig::default(),
            gnss: GnssConfig::default(),
            noise: FactorNoise::default(),
            gmm: GmmConfig::default(),
            optimizer: LmConfig::default(),
            init: InitConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults with the mounting and sensor noise of a simulated scenario.
    /// Zero noise levels keep the default weights.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let mut cfg = Self::default();
        cfg.frames.lever_arm = scenario.frames.lever_arm;
        cfg.frames.radar_yaw_deg = scenario.frames.radar_yaw_deg;
        let keep = |v: f64, d: f64| if v > 0.0 { v } else { d };
        cfg.imu.accel_noise_density = keep(scenario.imu.accel_noise_density, cfg.imu.accel_noise_density);
        cfg.imu.gyro_noise_density = keep(scenario.imu.gyro_noise_density, cfg.imu.gyro_noise_density);
        cfg.noise.pseudorange_sigma = keep(scenario.gnss.pseudorange_sigma, cfg.noise.pseudorange_sigma);
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.window_size < 2 {
            return bad("window_size", "must be at least 2");
        }
        if !self.gravity.iter().all(|v| v.is_finite()) {
            return bad("gravity", "must be finite");
        }
        if !self.frames.lever_arm.iter().all(|v| v.is_finite()) || !self.frames.radar_yaw_deg.is_finite() {
            return bad("frames", "lever_arm and radar_yaw_deg must be finite");
        }
        if let OriginPolicy::Fixed([lat, lon, h]) = self.frames.enu_origin {
            if let Err(e) = GeodeticPoint::from_degrees(lat, lon, h) {
                return bad("frames.enu_origin", &e.to_string());
            }
        }
        let imu = &self.imu;
        if ![imu.accel_noise_density, imu.gyro_noise_density, imu.accel_random_walk, imu.gyro_random_walk].into_iter().all(positive) {
            return bad("imu", "noise densities must be positive");
        }
        if !positive(self.radar.noise.sigma_v) || !positive(self.radar.noise.correlation_time) {
            return bad("radar.noise", "sigma_v and correlation_time must be positive");
        }
        if !positive(self.radar.max_gap) {
            return bad("radar.max_gap", "must be positive");
        }
        let r = &self.radar.ransac;
        if r.min_points < 2 || r.iterations == 0 || !positive(r.inlier_threshold) || !(0.0..=1.0).contains(&r.min_consensus_fraction) {
            return bad("radar.ransac", "needs min_points >= 2, iterations > 0, inlier_threshold > 0, min_consensus_fraction in [0, 1]");
        }
        if !(0.0..90.0).contains(&self.gnss.elevation_mask_deg) {
            return bad("gnss.elevation_mask_deg", "must lie in [0, 90)");
        }
        if !positive(self.gnss.cycle_slip_threshold) {
            return bad("gnss.cycle_slip_threshold", "must be positive");
        }
        if self.gnss.doppler_sign.abs() != 1.0 {
            return bad("gnss.doppler_sign", "must be +1 or -1");
        }
        let n = &self.noise;
        if ![n.pseudorange_sigma, n.tdcp_sigma, n.clock_bias_sigma, n.clock_drift_sigma].into_iter().all(positive) {
            return bad("noise", "sigmas must be positive");
        }
        if self.gmm.min_residuals < 2 || self.gmm.history < self.gmm.min_residuals {
            return bad("gmm", "needs 2 <= min_residuals <= history");
        }
        if self.gmm.max_iterations == 0 || !positive(self.gmm.tolerance) {
            return bad("gmm", "max_iterations and tolerance must be positive");
        }
        if self.optimizer.max_iterations == 0 || !positive(self.optimizer.initial_lambda) {
            return bad("optimizer", "max_iterations and initial_lambda must be positive");
        }
        let i = &self.init;
        let sigmas = [
            i.sigma_position,
            i.sigma_velocity,
            i.sigma_roll_pitch,
            i.sigma_yaw,
            i.sigma_accel_bias,
            i.sigma_gyro_bias,
            i.sigma_clock_bias,
            i.sigma_clock_drift,
            i.alignment_window,
        ];
        if !sigmas.into_iter().all(positive) {
            return bad("init", "sigmas and alignment_window must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[ablation]\nenable_radr = false\n").unwrap_err();
        assert!(err.to_string().contains("enable_radr"), "{err}");
    }

    #[test]
    fn ablation_and_origin_parse() {
        let cfg = RunConfig::from_toml(
            "[ablation]\nenable_radar = false\nnoise_model = \"gaussian\"\n[frames]\nenu_origin = { fixed = [30.5, 114.3, 20.0] }\n",
        )
        .unwrap();
        assert!(!cfg.ablation.enable_radar);
        assert_eq!(cfg.ablation.noise_model, NoiseModelKind::Gaussian);
        assert_eq!(cfg.frames.enu_origin, OriginPolicy::Fixed([30.5, 114.3, 20.0]));
        assert!(RunConfig::from_toml("window_size = 1\n").is_err());
    }
}
