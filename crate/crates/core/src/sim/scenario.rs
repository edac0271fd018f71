//! Scenario description for the simulator (TOML).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnss::SatId;
use crate::radar::MIN_POINT_RANGE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    /// seconds
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub origin: OriginSpec,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub imu: ImuSpec,
    #[serde(default)]
    pub gnss: GnssSpec,
    #[serde(default)]
    pub clock: ClockSpec,
    #[serde(default)]
    pub radar: RadarSpec,
    #[serde(default)]
    pub frames: FrameSpec,
    #[serde(default)]
    pub faults: FaultSpec,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OriginSpec {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub height: f64,
}

impl Default for OriginSpec {
    fn default() -> Self {
        Self { latitude_deg: 31.2856, longitude_deg: 121.2147, height: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Stationary,
    Straight,
    Circle,
    FigureEight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Constant ground speed, m/s (ignored when stationary).
    #[serde(default)]
    pub speed: f64,
    /// Lap period for circle and figure-eight, seconds.
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default)]
    pub initial_heading_deg: f64,
}

fn default_period() -> f64 {
    100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    pub imu_hz: f64,
    pub radar_hz: f64,
    pub gnss_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { imu_hz: 100.0, radar_hz: 15.0, gnss_hz: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuSpec {
    /// Continuous white-noise densities; per-sample sigma is density·√rate.
    pub accel_noise_density: f64,
    pub gyro_noise_density: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self { accel_noise_density: 2e-2, gyro_noise_density: 2e-4, accel_bias: [0.05, -0.03, 0.02], gyro_bias: [1e-3, -5e-4, 8e-4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnssSpec {
    pub pseudorange_sigma: f64,
    /// meters
    pub phase_sigma: f64,
    /// Hz
    pub doppler_sigma: f64,
    pub satellites: usize,
    pub orbit_radius: f64,
    /// seconds
    pub orbit_period: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Satellite clock offsets are drawn from ±this bound, meters.
    pub satellite_clock_bound: f64,
    pub tropo_zenith: f64,
    pub iono_zenith: f64,
}

impl Default for GnssSpec {
    fn default() -> Self {
        Self {
            pseudorange_sigma: 1.0,
            phase_sigma: 0.005,
            doppler_sigma: 0.1,
            satellites: 8,
            orbit_radius: 2.8e7,
            orbit_period: 46_000.0,
            min_elevation_deg: 25.0,
            max_elevation_deg: 80.0,
            satellite_clock_bound: 3000.0,
            tropo_zenith: 2.3,
            iono_zenith: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftStep {
    pub t: f64,
    /// m/s added to the drift from `t` on.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSpec {
    /// meters at t = 0
    pub bias: f64,
    /// m/s
    pub drift: f64,
    pub drift_steps: Vec<DriftStep>,
}

impl Default for ClockSpec {
    fn default() -> Self {
        Self { bias: 150.0, drift: 0.4, drift_steps: Vec::new() }
    }
}

impl ClockSpec {
    pub fn bias_at(&self, t: f64) -> f64 {
        self.bias + self.drift * t + self.drift_steps.iter().filter(|s| t > s.t).map(|s| s.delta * (t - s.t)).sum::<f64>()
    }

    pub fn drift_at(&self, t: f64) -> f64 {
        self.drift + self.drift_steps.iter().filter(|s| t >= s.t).map(|s| s.delta).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarSpec {
    pub points_per_scan: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub fov_azimuth_deg: f64,
    pub fov_elevation_deg: f64,
    /// m/s
    pub doppler_sigma: f64,
    /// Fraction of points on moving targets.
    pub outlier_fraction: f64,
    /// Doppler offset magnitude range of moving targets, m/s.
    pub outlier_min_offset: f64,
    pub outlier_max_offset: f64,
}

impl Default for RadarSpec {
    fn default() -> Self {
        Self {
            points_per_scan: 60,
            min_range: 2.0,
            max_range: 80.0,
            fov_azimuth_deg: 55.0,
            fov_elevation_deg: 10.0,
            doppler_sigma: 0.1,
            outlier_fraction: 0.0,
            outlier_min_offset: 1.0,
            outlier_max_offset: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSpec {
    /// GNSS antenna in the body frame, meters.
    pub lever_arm: [f64; 3],
    /// Radar mounting yaw relative to the body x axis.
    pub radar_yaw_deg: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { lever_arm: [0.2, 0.0, 1.1], radar_yaw_deg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipath {
    pub sats: Vec<SatId>,
    pub start: f64,
    pub end: f64,
    /// meters added to the pseudorange
    #[serde(default = "default_multipath_bias")]
    pub bias: f64,
}

fn default_multipath_bias() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSlipSpec {
    pub sat: SatId,
    /// Applied at the first GNSS epoch at or after `t`.
    pub t: f64,
    pub cycles: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSpec {
    pub multipath: Vec<Multipath>,
    pub cycle_slips: Vec<CycleSlipSpec>,
    pub gnss_outages: Vec<TimeWindow>,
    pub radar_outages: Vec<TimeWindow>,
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::InfeasibleScenario(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Same scenario with every noise source and fault removed.
    pub fn noise_free(&self) -> Self {
        let mut s = self.clone();
        s.imu.accel_noise_density = 0.0;
        s.imu.gyro_noise_density = 0.0;
        s.gnss.pseudorange_sigma = 0.0;
        s.gnss.phase_sigma = 0.0;
        s.gnss.doppler_sigma = 0.0;
        s.radar.doppler_sigma = 0.0;
        s.radar.outlier_fraction = 0.0;
        s.faults = FaultSpec::default();
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(infeasible(format!("{name} must be positive"))) };
        let non_negative = |v: f64, name: &str| if v >= 0.0 && v.is_finite() { Ok(()) } else { Err(infeasible(format!("{name} must be non-negative"))) };
        positive(self.duration, "duration")?;
        positive(self.rates.imu_hz, "rates.imu_hz")?;
        positive(self.rates.radar_hz, "rates.radar_hz")?;
        positive(self.rates.gnss_hz, "rates.gnss_hz")?;
        let ratio = self.rates.imu_hz / self.rates.gnss_hz;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(infeasible("rates.imu_hz must be an integer multiple of rates.gnss_hz"));
        }
        non_negative(self.trajectory.speed, "trajectory.speed")?;
        positive(self.trajectory.period, "trajectory.period")?;
        non_negative(self.imu.accel_noise_density, "imu.accel_noise_density")?;
        non_negative(self.imu.gyro_noise_density, "imu.gyro_noise_density")?;
        non_negative(self.gnss.pseudorange_sigma, "gnss.pseudorange_sigma")?;
        non_negative(self.gnss.phase_sigma, "gnss.phase_sigma")?;
        non_negative(self.gnss.doppler_sigma, "gnss.doppler_sigma")?;
        non_negative(self.gnss.tropo_zenith, "gnss.tropo_zenith")?;
        non_negative(self.gnss.iono_zenith, "gnss.iono_zenith")?;
        non_negative(self.gnss.satellite_clock_bound, "gnss.satellite_clock_bound")?;
        if self.gnss.satellites == 0 {
            return Err(infeasible("gnss.satellites must be at least 1"));
        }
        if !(self.gnss.orbit_radius > 2e7 && self.gnss.orbit_radius < 5e7) {
            return Err(infeasible("gnss.orbit_radius must lie in (2e7, 5e7) m"));
        }
        positive(self.gnss.orbit_period, "gnss.orbit_period")?;
        if !(self.gnss.min_elevation_deg > 0.0 && self.gnss.min_elevation_deg <= self.gnss.max_elevation_deg && self.gnss.max_elevation_deg < 90.0) {
            return Err(infeasible("gnss.min_elevation_deg/max_elevation_deg must satisfy 0 < min ≤ max < 90"));
        }
        let r = &self.radar;
        if r.points_per_scan == 0 {
            return Err(infeasible("radar.points_per_scan must be positive (empty radar frustum)"));
        }
        if !(r.min_range > MIN_POINT_RANGE && r.max_range > r.min_range) {
            return Err(infeasible(format!("radar.min_range must exceed {MIN_POINT_RANGE} m and radar.max_range must exceed radar.min_range (empty radar frustum)")));
        }
        positive(r.fov_azimuth_deg, "radar.fov_azimuth_deg")?;
        non_negative(r.fov_elevation_deg, "radar.fov_elevation_deg")?;
        non_negative(r.doppler_sigma, "radar.doppler_sigma")?;
        if !(0.0..=1.0).contains(&r.outlier_fraction) {
            return Err(infeasible("radar.outlier_fraction must lie in [0, 1]"));
        }
        if !(r.outlier_min_offset >= 0.0 && r.outlier_max_offset >= r.outlier_min_offset) {
            return Err(infeasible("radar.outlier_min_offset/outlier_max_offset must satisfy 0 ≤ min ≤ max"));
        }
        let within = |t: f64, name: &str| {
            if (0.0..=self.duration).contains(&t) {
                Ok(())
            } else {
                Err(infeasible(format!("{name} = {t} lies outside [0, duration]")))
            }
        };
        for m in &self.faults.multipath {
            within(m.start, "faults.multipath.start")?;
            within(m.end, "faults.multipath.end")?;
            if m.end < m.start {
                return Err(infeasible("faults.multipath.end precedes start"));
            }
        }
        for c in &self.faults.cycle_slips {
            within(c.t, "faults.cycle_slips.t")?;
        }
        for (name, ws) in [("faults.gnss_outages", &self.faults.gnss_outages), ("faults.radar_outages", &self.faults.radar_outages)] {
            for w in ws {
                within(w.start, &format!("{name}.start"))?;
                within(w.end, &format!("{name}.end"))?;
                if w.end < w.start {
                    return Err(infeasible(format!("{name}.end precedes start")));
                }
            }
        }
        for s in &self.clock.drift_steps {
            within(s.t, "clock.drift_steps.t")?;
        }
        Ok(())
    }
}
