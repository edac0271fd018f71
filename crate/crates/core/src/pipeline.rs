//! Streaming fusion: front-end, robustification and sliding-window
//! optimization, one GNSS epoch at a time.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;
use serde::Serialize;

use crate::backend::{initialize, ConvergenceReport, EpochInputs, Factor, FactorKind, Problem, PseudorangeNoise};
use crate::error::{Error, Result};
use crate::geodesy::{FrameSet, GeodeticPoint};
use crate::gnss::{build_tdcp, elevation_filter, pseudorange_residual, GnssEpoch};
use crate::imu::preintegrate_interval;
use crate::io::{Dataset, NoiseModelKind, OriginPolicy, OutputPolicy, RunConfig};
use crate::radar::{estimate_ego_velocity, preintegrate_speeds, RansacConfig, SpeedSample};
use crate::robust::{detect_cycle_slip_signed, select_noise_model, GmmNoiseModel};
use crate::state::NavState;

/// Per-epoch bookkeeping written next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochDiagnostics {
    pub t: f64,
    pub satellites: usize,
    pub factor_counts: BTreeMap<FactorKind, usize>,
    pub radar_factor: bool,
    pub tdcp_candidates: usize,
    pub tdcp_rejected: usize,
    /// Mixture in effect for this epoch; `None` under the Gaussian model.
    pub gmm: Option<GmmNoiseModel>,
    pub lm: ConvergenceReport,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub enu_origin: GeodeticPoint,
    /// One estimate per processed epoch, chosen by the output policy.
    pub trajectory: Vec<NavState>,
    pub diagnostics: Vec<EpochDiagnostics>,
    /// Radar scans that produced a valid ego-velocity estimate.
    pub valid_radar_scans: usize,
}

/// Longitudinal speeds of every scan with a valid ego-velocity estimate.
/// Each scan gets its own RANSAC seed so results do not depend on which
/// scans are processed.
pub fn radar_speeds(dataset: &Dataset, ransac: &RansacConfig, frames: &FrameSet) -> Vec<SpeedSample> {
    dataset
        .radar
        .iter()
        .enumerate()
        .filter_map(|(i, scan)| {
            let cfg = RansacConfig { seed: ransac.seed.wrapping_add(i as u64), ..*ransac };
            let est = estimate_ego_velocity(&scan.points, &cfg, &frames.rotation_body_from_radar);
            est.valid.then_some(SpeedSample { timestamp: scan.timestamp, speed: est.body_velocity.x })
        })
        .collect()
}

/// Moves `x` from the ENU frame of `from` into that of `to`.
fn reanchor_state(x: &NavState, from: &FrameSet, to: &FrameSet) -> NavState {
    let rot = to.rotation_ecef_from_enu.transpose() * from.rotation_ecef_from_enu;
    let q = nalgebra::UnitQuaternion::from_matrix(&rot);
    NavState {
        position: to.ecef_to_enu(&from.enu_to_ecef(&x.position)),
        velocity: rot * x.velocity,
        orientation: q * x.orientation,
        ..*x
    }
}

struct GmmState {
    history: VecDeque<f64>,
    current: Option<GmmNoiseModel>,
}

impl GmmState {
    fn noise(&mut self, config: &RunConfig) -> PseudorangeNoise {
        let gaussian = PseudorangeNoise::Gaussian { sigma: config.noise.pseudorange_sigma };
        if config.ablation.noise_model == NoiseModelKind::Gaussian {
            return gaussian;
        }
        self.current = None;
        if self.history.len() < config.gmm.min_residuals {
            return gaussian;
        }
        let residuals: Vec<f64> = self.history.iter().copied().collect();
        match select_noise_model(&residuals, config.gmm.max_iterations, config.gmm.tolerance) {
            Ok(sel) => {
                self.current = Some(sel.model);
                PseudorangeNoise::Mixture(sel.model)
            }
            Err(e) => {
                log::warn!("mixture fit failed ({e}); using the Gaussian model");
                gaussian
            }
        }
    }

    /// Appends the pseudorange residuals of `epoch` evaluated at `x`.
    fn record(&mut self, epoch: &GnssEpoch, x: &NavState, frames: &FrameSet, capacity: usize) {
        for (id, obs) in &epoch.observations {
            let r = pseudorange_residual(obs, &epoch.sat_states[id], x, frames);
            if r.is_finite() {
                self.history.push_back(r);
            }
        }
        while self.history.len() > capacity {
            self.history.pop_front();
        }
    }
}

/// Runs the full estimator over a dataset.
pub fn fuse(dataset: &Dataset, config: &RunConfig) -> Result<FusionOutput> {
    config.validate()?;
    if dataset.imu.is_empty() {
        return Err(Error::EmptyInput("dataset has no IMU samples".into()));
    }
    let epochs: Vec<&GnssEpoch> = dataset.gnss.iter().filter(|e| !e.observations.is_empty()).collect();
    let lever_arm = config.frames.lever_arm();
    let radar_rot = config.frames.rotation_body_from_radar();
    let mask = config.gnss.elevation_mask_deg.to_radians();

    let mut init = None;
    let mut start = 0;
    for i in 0..epochs.len().saturating_sub(1) {
        if dataset.imu[0].timestamp > epochs[i].timestamp + 1e-9 {
            continue;
        }
        match initialize(&[epochs[i].clone(), epochs[i + 1].clone()], &dataset.imu, lever_arm, radar_rot, &Vector3::from(config.gravity), &config.init) {
            Ok(v) => {
                init = Some(v);
                start = i;
                break;
            }
            Err(e) => log::info!("initialization deferred at t = {}: {e}", epochs[i].timestamp),
        }
    }
    let init = init.ok_or_else(|| Error::InitializationDeferred("initialization never achieved".into()))?;
    let (frames, x0) = match config.frames.enu_origin {
        OriginPolicy::FirstFix => (init.frames.clone(), init.state),
        OriginPolicy::Fixed([lat, lon, h]) => {
            let f = init.frames.with_origin(GeodeticPoint::from_degrees(lat, lon, h)?);
            let x = reanchor_state(&init.state, &init.frames, &f);
            (f, x)
        }
    };
    log::info!("initialized at t = {} with {} satellites", x0.timestamp, epochs[start].satellite_count());

    let gravity = Vector3::from(config.gravity);
    let mut problem = Problem::new(frames.clone(), config.window_size, gravity, config.noise)?;
    let id0 = problem.add_state(x0)?;
    problem.add_factor(Factor::Prior { state: id0, mean: x0, sqrt_information: init.prior_sqrt_information })?;
    let first = elevation_filter(epochs[start], &frames.enu_to_ecef(&(x0.position + x0.orientation * lever_arm)), mask);
    problem.add_pseudorange_factors(id0, &first, PseudorangeNoise::Gaussian { sigma: config.noise.pseudorange_sigma })?;
    let lm = problem.optimize(&config.optimizer)?;

    let speeds = if config.ablation.enable_radar { radar_speeds(dataset, &config.radar.ransac, &frames) } else { Vec::new() };
    let mut gmm = GmmState { history: VecDeque::new(), current: None };
    let mut out = FusionOutput { enu_origin: frames.enu_origin, trajectory: Vec::new(), diagnostics: Vec::new(), valid_radar_scans: speeds.len() };
    let newest = *problem.newest().unwrap().1;
    gmm.record(&first, &newest, &frames, config.gmm.history);
    emit(&problem, config, &mut out.trajectory);
    out.diagnostics.push(EpochDiagnostics {
        t: newest.timestamp,
        satellites: first.satellite_count(),
        factor_counts: problem.factor_counts(),
        radar_factor: false,
        tdcp_candidates: 0,
        tdcp_rejected: 0,
        gmm: None,
        lm,
    });

    let imu_end = dataset.imu.last().unwrap().timestamp;
    let mut prev_epoch = first;
    for epoch in dataset.gnss.iter().filter(|e| e.timestamp > x0.timestamp) {
        let prev = *problem.newest().unwrap().1;
        if epoch.timestamp > imu_end + 1e-9 {
            log::warn!("IMU stream ends at {imu_end}; stopping before epoch t = {}", epoch.timestamp);
            break;
        }
        let imu = preintegrate_interval(&dataset.imu, prev.timestamp, epoch.timestamp, prev.bias(), config.imu)?;
        let radar = preintegrate_speeds(&speeds, &imu, config.radar.noise, config.radar.max_gap);
        let predicted = imu.predict(&prev, &gravity);
        let antenna = frames.enu_to_ecef(&(predicted.position + predicted.orientation * lever_arm));
        let filtered = elevation_filter(epoch, &antenna, mask);

        let mut tdcp = Vec::new();
        let mut candidates = 0;
        if config.ablation.enable_tdcp {
            let dt = epoch.timestamp - prev_epoch.timestamp;
            for mut m in build_tdcp(&prev_epoch, &filtered) {
                candidates += 1;
                let (o0, o1) = (&prev_epoch.observations[&m.sat_id], &filtered.observations[&m.sat_id]);
                let check = detect_cycle_slip_signed(
                    o0.carrier_phase.unwrap(),
                    o1.carrier_phase.unwrap(),
                    o0.doppler,
                    o1.doppler,
                    o1.wavelength,
                    dt,
                    config.gnss.cycle_slip_threshold,
                    config.gnss.doppler_sign,
                );
                if check.passed {
                    m.accepted = true;
                    let s = (prev_epoch.sat_states[&m.sat_id], filtered.sat_states[&m.sat_id]);
                    tdcp.push((m, s.0, s.1));
                } else {
                    log::debug!("t = {}: TDCP on satellite {} rejected, epsilon {:.4} m", epoch.timestamp, m.sat_id, check.epsilon);
                }
            }
        }
        let accepted = tdcp.len();
        gmm.record(&filtered, &predicted, &frames, config.gmm.history);
        let pseudorange_noise = gmm.noise(config);
        let radar_factor = radar.is_some();
        problem.add_epoch(EpochInputs { imu, radar, gnss: filtered.clone(), tdcp, pseudorange_noise })?;
        let lm = problem.optimize(&config.optimizer)?;
        let newest = *problem.newest().unwrap().1;
        if !newest.is_finite() {
            return Err(Error::NonFiniteResidual(format!("state at t = {}", newest.timestamp)));
        }
        emit(&problem, config, &mut out.trajectory);
        out.diagnostics.push(EpochDiagnostics {
            t: newest.timestamp,
            satellites: filtered.satellite_count(),
            factor_counts: problem.factor_counts(),
            radar_factor,
            tdcp_candidates: candidates,
            tdcp_rejected: candidates - accepted,
            gmm: gmm.current,
            lm,
        });
        prev_epoch = filtered;
    }
    if config.output == OutputPolicy::Lagged {
        let skip = if problem.len() == problem.capacity { 1 } else { 0 };
        out.trajectory.extend(problem.states().iter().skip(skip).copied());
    }
    Ok(out)
}

/// Appends the estimate that is final under the output policy: the newest
/// state, or the oldest one once the window is full (it is marginalized
/// before the next optimization).
fn emit(problem: &Problem, config: &RunConfig, trajectory: &mut Vec<NavState>) {
    match config.output {
        OutputPolicy::Newest => trajectory.push(*problem.newest().unwrap().1),
        OutputPolicy::Lagged if problem.len() == problem.capacity => trajectory.push(problem.states()[0]),
        OutputPolicy::Lagged => {}
    }
}
