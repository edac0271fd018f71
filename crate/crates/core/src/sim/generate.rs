//! Trajectory and sensor-stream synthesis.
//!
//! Ground truth is defined at the IMU ticks so that midpoint integration of
//! the emitted (noise-free) IMU samples reproduces it to round-off: yaw
//! follows the analytic heading, velocity is `s·(cos ψ, sin ψ, 0)`,
//! position is the trapezoid of tick velocities, and the gyro and
//! accelerometer samples are solved from the two-point midpoint relations.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{Scenario, TrajectoryKind};
use crate::error::Result;
use crate::geodesy::{elevation_azimuth, FrameSet, GeodeticPoint};
use crate::gnss::{
    antenna_offset_ecef, b1i_wavelength, pseudorange_residual, split_range, GnssEpoch, SatId, SatelliteObservation, SatelliteState,
};
use crate::imu::ImuSample;
use crate::radar::{RadarPoint, RadarScan};
use crate::state::NavState;

/// Heading amplitude that closes both lobes of the figure-eight (first zero
/// of the Bessel function J0).
const FIGURE_EIGHT_AMPLITUDE: f64 = 2.404_825_557_695_773;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedSlip {
    pub sat: SatId,
    pub t: f64,
    pub cycles: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectionLog {
    pub cycle_slips: Vec<AppliedSlip>,
    /// Integer ambiguity per satellite at every epoch it was observed.
    pub ambiguities: BTreeMap<SatId, Vec<(f64, i64)>>,
    /// Pseudorange noise (meters) added per (epoch time, satellite),
    /// multipath excluded.
    pub pseudorange_noise: BTreeMap<(u64, SatId), f64>,
    /// Moving-target flags per radar scan.
    pub radar_outliers: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub frames: FrameSet,
    /// Truth at every IMU tick.
    pub truth: Vec<NavState>,
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub gnss: Vec<GnssEpoch>,
    pub log: InjectionLog,
}

impl Simulation {
    /// Truth state at a GNSS epoch time (which always falls on an IMU tick).
    pub fn truth_at(&self, t: f64) -> Option<&NavState> {
        let i = (t * self.scenario.rates.imu_hz).round() as usize;
        self.truth.get(i).filter(|x| (x.timestamp - t).abs() < 1e-9)
    }
}

pub fn epoch_key(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

fn heading(s: &Scenario, t: f64) -> (f64, f64) {
    let tr = &s.trajectory;
    let psi0 = tr.initial_heading_deg.to_radians();
    let w = 2.0 * PI / tr.period;
    match tr.kind {
        TrajectoryKind::Stationary | TrajectoryKind::Straight => (psi0, 0.0),
        TrajectoryKind::Circle => (psi0 + w * t, w),
        TrajectoryKind::FigureEight => {
            let a = FIGURE_EIGHT_AMPLITUDE;
            (psi0 + a * (1.0 - (w * t).cos()), a * w * (w * t).sin())
        }
    }
}

fn speed(s: &Scenario) -> f64 {
    match s.trajectory.kind {
        TrajectoryKind::Stationary => 0.0,
        _ => s.trajectory.speed,
    }
}

pub fn scenario_frames(s: &Scenario) -> Result<FrameSet> {
    let origin = GeodeticPoint::from_degrees(s.origin.latitude_deg, s.origin.longitude_deg, s.origin.height)?;
    let radar = *Rotation3::from_euler_angles(0.0, 0.0, s.frames.radar_yaw_deg.to_radians()).matrix();
    FrameSet::new(origin, Vector3::from(s.frames.lever_arm), radar)
}

struct Orbit {
    axis_a: Vector3<f64>,
    axis_b: Vector3<f64>,
    radius: f64,
    rate: f64,
    clock_offset: f64,
    clock_rate: f64,
}

impl Orbit {
    fn position(&self, t: f64) -> Vector3<f64> {
        let th = self.rate * t;
        self.radius * (th.cos() * self.axis_a + th.sin() * self.axis_b)
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        let th = self.rate * t;
        self.radius * self.rate * (-th.sin() * self.axis_a + th.cos() * self.axis_b)
    }
}

fn place_satellites(s: &Scenario, frames: &FrameSet, rng: &mut ChaCha8Rng) -> Vec<Orbit> {
    let g = &s.gnss;
    let n = g.satellites;
    let az0: f64 = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|j| {
            let az = az0 + 2.0 * PI * j as f64 / n as f64 + rng.random_range(-0.2..0.2);
            let el = rng.random_range(g.min_elevation_deg..=g.max_elevation_deg).to_radians();
            let d_enu = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            let d = frames.rotation_ecef_from_enu * d_enu;
            let o = frames.origin_ecef;
            let b = o.dot(&d);
            let c = o.norm_squared() - g.orbit_radius * g.orbit_radius;
            let p0 = o + d * (-b + (b * b - c).sqrt());
            let axis_a = p0 / p0.norm();
            let tilt: f64 = rng.random_range(0.0..2.0 * PI);
            let helper = if axis_a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            let e1 = (helper - axis_a * axis_a.dot(&helper)).normalize();
            let e2 = axis_a.cross(&e1);
            let axis_b = tilt.cos() * e1 + tilt.sin() * e2;
            Orbit {
                axis_a,
                axis_b,
                radius: g.orbit_radius,
                rate: 2.0 * PI / g.orbit_period,
                clock_offset: rng.random_range(-1.0..=1.0) * g.satellite_clock_bound,
                clock_rate: rng.random_range(-1e-3..=1e-3),
            }
        })
        .collect()
}

fn iono_obliquity(el: f64) -> f64 {
    const RE: f64 = 6_371_000.0;
    const HI: f64 = 350_000.0;
    let x = RE * el.cos() / (RE + HI);
    1.0 / (1.0 - x * x).sqrt()
}

/// Atmospheric delays (tropo, iono) for a satellite seen from the origin.
fn delays(s: &Scenario, frames: &FrameSet, sat: &Vector3<f64>) -> (f64, f64) {
    let (el, _) = elevation_azimuth(sat, &frames.origin_ecef).unwrap_or((PI / 2.0, 0.0));
    let el = el.max(0.05);
    (s.gnss.tropo_zenith / el.sin(), s.gnss.iono_zenith * iono_obliquity(el))
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

/// Generates truth and all sensor streams. Identical scenarios yield
/// bit-identical output.
pub fn generate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let s = scenario;
    let frames = scenario_frames(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);

    // Truth and IMU at the ticks.
    let dt = 1.0 / s.rates.imu_hz;
    let n_imu = (s.duration * s.rates.imu_hz).round() as usize;
    let spd = speed(s);
    let ba = Vector3::from(s.imu.accel_bias);
    let bg = Vector3::from(s.imu.gyro_bias);
    let mut truth = Vec::with_capacity(n_imu);
    let mut yaw = Vec::with_capacity(n_imu);
    for i in 0..n_imu {
        let t = i as f64 / s.rates.imu_hz;
        let (psi, _) = heading(s, t);
        yaw.push(psi);
        truth.push(NavState {
            timestamp: t,
            position: Vector3::zeros(),
            velocity: spd * Vector3::new(psi.cos(), psi.sin(), 0.0),
            orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), psi),
            accel_bias: ba,
            gyro_bias: bg,
            clock_bias: s.clock.bias_at(t),
            clock_drift: s.clock.drift_at(t),
        });
    }
    for i in 1..n_imu {
        truth[i].position = truth[i - 1].position + 0.5 * (truth[i - 1].velocity + truth[i].velocity) * dt;
    }
    let (psi_start, rate_start) = heading(s, 0.0);
    let mut yaw_rate = vec![rate_start; n_imu];
    let mut force = vec![Vector3::zeros(); n_imu];
    force[0] = spd * rate_start * Vector3::new(-psi_start.sin(), psi_start.cos(), 0.0) - GRAVITY;
    for i in 1..n_imu {
        let dpsi = yaw[i] - yaw[i - 1];
        yaw_rate[i] = 2.0 * dpsi / dt - yaw_rate[i - 1];
        force[i] = 2.0 * ((truth[i].velocity - truth[i - 1].velocity) / dt - GRAVITY) - force[i - 1];
    }
    let accel_noise = normal(s.imu.accel_noise_density * s.rates.imu_hz.sqrt());
    let gyro_noise = normal(s.imu.gyro_noise_density * s.rates.imu_hz.sqrt());
    let mut imu = Vec::with_capacity(n_imu);
    for i in 0..n_imu {
        let f_body = truth[i].orientation.inverse() * force[i];
        let na = Vector3::new(accel_noise.sample(&mut rng), accel_noise.sample(&mut rng), accel_noise.sample(&mut rng));
        let ng = Vector3::new(gyro_noise.sample(&mut rng), gyro_noise.sample(&mut rng), gyro_noise.sample(&mut rng));
        imu.push(ImuSample::new(truth[i].timestamp, f_body + ba + na, Vector3::new(0.0, 0.0, yaw_rate[i]) + bg + ng));
    }

    // Radar scans.
    let radar_scan_count = (s.duration * s.rates.radar_hz).floor() as usize;
    let r_br: Matrix3<f64> = frames.rotation_body_from_radar;
    let radar_noise = normal(s.radar.doppler_sigma);
    let mut radar = Vec::new();
    let mut outlier_log = Vec::new();
    let rs = &s.radar;
    let n_out = (rs.outlier_fraction * rs.points_per_scan as f64).round() as usize;
    for k in 0..radar_scan_count {
        let t = k as f64 / s.rates.radar_hz;
        if s.faults.radar_outages.iter().any(|w| w.contains(t)) {
            continue;
        }
        let v_radar = r_br.transpose() * Vector3::new(spd, 0.0, 0.0);
        let mut points = Vec::with_capacity(rs.points_per_scan);
        let mut flags = vec![false; rs.points_per_scan];
        for (j, flag) in flags.iter_mut().enumerate() {
            let az = rng.random_range(-1.0..=1.0) * rs.fov_azimuth_deg.to_radians();
            let el = rng.random_range(-1.0..=1.0) * rs.fov_elevation_deg.to_radians();
            let range = rng.random_range(rs.min_range..=rs.max_range);
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let mut doppler = dir.dot(&v_radar) + radar_noise.sample(&mut rng);
            let offset_mag = rng.random_range(rs.outlier_min_offset..=rs.outlier_max_offset);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            if j < n_out {
                doppler += sign * offset_mag;
                *flag = true;
            }
            points.push(RadarPoint { position: dir * range, doppler });
        }
        radar.push(RadarScan { timestamp: t, points });
        outlier_log.push(flags);
    }

    // GNSS epochs.
    let orbits = place_satellites(s, &frames, &mut rng);
    let lambda = b1i_wavelength();
    let step = (s.rates.imu_hz / s.rates.gnss_hz).round() as usize;
    let pr_noise = normal(s.gnss.pseudorange_sigma);
    let phase_noise = normal(s.gnss.phase_sigma);
    let doppler_noise = normal(s.gnss.doppler_sigma);
    let mut log = InjectionLog { radar_outliers: outlier_log, ..Default::default() };
    let mut ambiguity_base: BTreeMap<SatId, (f64, i64)> = BTreeMap::new();
    let mut slips_applied: BTreeMap<SatId, i64> = BTreeMap::new();
    let mut pending_slips: Vec<_> = s.faults.cycle_slips.clone();
    let mut gnss = Vec::new();
    for i in (0..n_imu).step_by(step) {
        let x = &truth[i];
        let t = x.timestamp;
        // Draw every random number regardless of outages so streams stay aligned across fault configurations.
        let draws: Vec<(f64, f64, f64)> =
            orbits.iter().map(|_| (pr_noise.sample(&mut rng), phase_noise.sample(&mut rng), doppler_noise.sample(&mut rng))).collect();
        let mut epoch = GnssEpoch { timestamp: t, ..Default::default() };
        pending_slips.retain(|c| {
            if c.t <= t + 1e-9 {
                *slips_applied.entry(c.sat).or_insert(0) += c.cycles;
                log.cycle_slips.push(AppliedSlip { sat: c.sat, t, cycles: c.cycles });
                false
            } else {
                true
            }
        });
        if s.faults.gnss_outages.iter().any(|w| w.contains(t)) {
            gnss.push(epoch);
            continue;
        }
        let rel = antenna_offset_ecef(x, &frames);
        let omega_body = Vector3::new(0.0, 0.0, heading(s, t).1);
        let v_ant = frames.rotation_ecef_from_enu * (x.velocity + x.orientation * omega_body.cross(&frames.lever_arm_gnss));
        for (j, orbit) in orbits.iter().enumerate() {
            let sat_id = j as SatId + 1;
            let (noise_pr, noise_phase, noise_doppler) = draws[j];
            let p_sat = orbit.position(t);
            let rcv = frames.origin_ecef + rel;
            match elevation_azimuth(&p_sat, &rcv) {
                Ok((el, _)) if el > 0.0 => {}
                _ => continue,
            }
            let (tropo, iono) = delays(s, &frames, &p_sat);
            let mut sat = SatelliteState {
                position_ecef: p_sat,
                clock_error: orbit.clock_offset + orbit.clock_rate * t,
                tropo_delay: tropo,
                iono_delay: iono,
            };
            let multipath: f64 =
                s.faults.multipath.iter().filter(|m| m.sats.contains(&sat_id) && t >= m.start && t < m.end).map(|m| m.bias).sum();

            // Pseudorange: model + noise + multipath, with the rounding of the
            // stored value folded into the satellite clock so the record is
            // self-consistent.
            let (s_norm, small) = split_range(&p_sat, &frames, &rel);
            let mut obs = SatelliteObservation {
                sat_id,
                pseudorange: s_norm,
                carrier_phase: None,
                doppler: None,
                snr: 30.0 + 15.0 * elevation_azimuth(&p_sat, &rcv).map(|e| e.0.sin()).unwrap_or(0.5),
                wavelength: lambda,
            };
            let model_offset = pseudorange_residual(&obs, &sat, x, &frames);
            obs.pseudorange = s_norm + (model_offset + noise_pr + multipath);
            let leftover = pseudorange_residual(&obs, &sat, x, &frames) + noise_pr + multipath;
            sat.clock_error += leftover;
            log.pseudorange_noise.insert((epoch_key(t), sat_id), noise_pr);

            // Carrier phase in cycles with a constant integer ambiguity.
            let (base, n_int) = *ambiguity_base.entry(sat_id).or_insert_with(|| {
                let n = (s_norm / lambda).round();
                (n * lambda, -(n as i64))
            });
            let slip = slips_applied.get(&sat_id).copied().unwrap_or(0);
            log.ambiguities.entry(sat_id).or_default().push((t, n_int + slip));
            let phase_m = (s_norm - base) + small + x.clock_bias - sat.clock_error + tropo - iono;
            obs.carrier_phase = Some(phase_m / lambda + slip as f64 + noise_phase / lambda);

            // Doppler as the phase rate, in Hz.
            let u = ((p_sat - frames.origin_ecef) - rel).normalize();
            let h = 0.5;
            let (tr_p, io_p) = delays(s, &frames, &orbit.position(t + h));
            let (tr_m, io_m) = delays(s, &frames, &orbit.position(t - h));
            let range_rate = u.dot(&(orbit.velocity(t) - v_ant));
            let rate = range_rate + x.clock_drift - orbit.clock_rate + (tr_p - tr_m) / (2.0 * h) - (io_p - io_m) / (2.0 * h);
            obs.doppler = Some(rate / lambda + noise_doppler);

            epoch.observations.insert(sat_id, obs);
            epoch.sat_states.insert(sat_id, sat);
        }
        gnss.push(epoch);
    }
    Ok(Simulation { scenario: s.clone(), frames, truth, imu, radar, gnss, log })
}
