#![allow(dead_code)]

pub mod jacobian;
pub mod linear_graph;
pub mod motion;

use std::path::PathBuf;

use fusion_core::backend::{EpochInputs, PseudorangeNoise};
use fusion_core::gnss::{build_tdcp, clock_drift_residual, pseudorange_residual, tdcp_residual};
use fusion_core::imu::{preintegrate_interval, ImuNoise};
use fusion_core::radar::{estimate_ego_velocity, preintegrate_speeds, RadarVelocityNoise, RansacConfig, SpeedSample};
use fusion_core::sim::{generate, Scenario, Simulation, GRAVITY};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::from_toml(&std::fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

pub fn golden() -> Simulation {
    generate(&load_scenario("figure_eight.toml")).unwrap()
}

/// Largest absolute residual per factor type with every factor built from
/// the simulated streams and evaluated at ground truth.
#[derive(Debug, Default)]
pub struct TruthResiduals {
    pub imu: f64,
    pub radar: f64,
    pub pseudorange: f64,
    pub tdcp: f64,
    pub clock: f64,
}

impl TruthResiduals {
    pub fn max(&self) -> f64 {
        [self.imu, self.radar, self.pseudorange, self.tdcp, self.clock].into_iter().fold(0.0, f64::max)
    }
}

/// Longitudinal speeds of every valid radar scan.
pub fn radar_speeds(sim: &Simulation) -> Vec<SpeedSample> {
    sim.radar
        .iter()
        .map(|scan| (scan.timestamp, estimate_ego_velocity(&scan.points, &RansacConfig::default(), &sim.frames.rotation_body_from_radar)))
        .filter(|(_, e)| e.valid)
        .map(|(t, e)| SpeedSample { timestamp: t, speed: e.body_velocity.x })
        .collect()
}

/// Factor inputs between GNSS epochs `k - 1` and `k`, preintegrated with
/// the true bias and with every TDCP measurement accepted.
pub fn epoch_inputs(sim: &Simulation, speeds: &[SpeedSample], k: usize, noise: PseudorangeNoise) -> EpochInputs {
    let (e0, e1) = (&sim.gnss[k - 1], &sim.gnss[k]);
    let bias = sim.truth_at(e0.timestamp).unwrap().bias();
    let imu = preintegrate_interval(&sim.imu, e0.timestamp, e1.timestamp, bias, ImuNoise::default()).unwrap();
    let radar = preintegrate_speeds(speeds, &imu, RadarVelocityNoise::default(), 0.2);
    let tdcp = build_tdcp(e0, e1)
        .into_iter()
        .map(|mut m| {
            m.accepted = true;
            let (s0, s1) = (e0.sat_states[&m.sat_id], e1.sat_states[&m.sat_id]);
            (m, s0, s1)
        })
        .collect();
    EpochInputs { imu, radar, gnss: e1.clone(), tdcp, pseudorange_noise: noise }
}

pub fn truth_residuals(sim: &Simulation) -> TruthResiduals {
    let mut out = TruthResiduals::default();
    let speeds = radar_speeds(sim);
    for w in sim.gnss.windows(2) {
        let (e0, e1) = (&w[0], &w[1]);
        let x0 = sim.truth_at(e0.timestamp).unwrap();
        let x1 = sim.truth_at(e1.timestamp).unwrap();
        let imu = preintegrate_interval(&sim.imu, e0.timestamp, e1.timestamp, x0.bias(), ImuNoise::default()).unwrap();
        out.imu = out.imu.max(imu.evaluate(x0, x1, &GRAVITY).0.amax());
        let radar = preintegrate_speeds(&speeds, &imu, RadarVelocityNoise::default(), 0.2).unwrap();
        out.radar = out.radar.max(radar.evaluate(x0, x1).0.amax());
        out.clock = out.clock.max(clock_drift_residual(x0, x1, e1.timestamp - e0.timestamp).unwrap().amax());
        for mut m in build_tdcp(e0, e1) {
            m.accepted = true;
            let s0 = &e0.sat_states[&m.sat_id];
            let s1 = &e1.sat_states[&m.sat_id];
            out.tdcp = out.tdcp.max(tdcp_residual(&m, (s0, s1), x0, x1, &sim.frames).unwrap().abs());
        }
    }
    for e in &sim.gnss {
        let x = sim.truth_at(e.timestamp).unwrap();
        for (id, obs) in &e.observations {
            out.pseudorange = out.pseudorange.max(pseudorange_residual(obs, &e.sat_states[id], x, &sim.frames).abs());
        }
    }
    out
}
