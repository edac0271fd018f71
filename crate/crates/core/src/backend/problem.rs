use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::factor::{sqrt_information_fixed, Factor, FactorKind, FactorLinearization, PseudorangeNoise, StateId};
use crate::error::{Error, Result};
use crate::geodesy::FrameSet;
use crate::gnss::{GnssEpoch, SatelliteState, TdcpMeasurement};
use crate::imu::PreintegratedImu;
use crate::radar::PreintegratedRadarVelocity;
use crate::state::{NavState, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorNoise {
    /// Gaussian pseudorange sigma, meters.
    pub pseudorange_sigma: f64,
    pub tdcp_sigma: f64,
    pub clock_bias_sigma: f64,
    pub clock_drift_sigma: f64,
}

impl Default for FactorNoise {
    fn default() -> Self {
        Self { pseudorange_sigma: 1.0, tdcp_sigma: 0.01, clock_bias_sigma: 0.3, clock_drift_sigma: 0.05 }
    }
}

/// Measurements gathered between the newest window state and a new GNSS
/// epoch.
#[derive(Debug, Clone)]
pub struct EpochInputs {
    pub imu: PreintegratedImu,
    pub radar: Option<PreintegratedRadarVelocity>,
    /// Already elevation-filtered.
    pub gnss: GnssEpoch,
    /// Accepted TDCP with the satellite states at both epochs.
    pub tdcp: Vec<(TdcpMeasurement, SatelliteState, SatelliteState)>,
    pub pseudorange_noise: PseudorangeNoise,
}

/// Sliding window of navigation states and the factors between them.
#[derive(Debug, Clone)]
pub struct Problem {
    pub frames: FrameSet,
    pub capacity: usize,
    pub gravity: Vector3<f64>,
    pub noise: FactorNoise,
    pub(crate) ids: Vec<StateId>,
    pub(crate) states: Vec<NavState>,
    pub(crate) factors: Vec<Factor>,
    next_id: StateId,
}

impl Problem {
    pub fn new(frames: FrameSet, capacity: usize, gravity: Vector3<f64>, noise: FactorNoise) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::InvalidArgument("window capacity must be at least 2".into()));
        }
        Ok(Self { frames, capacity, gravity, noise, ids: Vec::new(), states: Vec::new(), factors: Vec::new(), next_id: 0 })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn ids(&self) -> &[StateId] {
        &self.ids
    }

    pub fn states(&self) -> &[NavState] {
        &self.states
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn newest(&self) -> Option<(StateId, &NavState)> {
        self.ids.last().map(|id| (*id, self.states.last().unwrap()))
    }

    pub fn index_of(&self, id: StateId) -> Option<usize> {
        self.ids.iter().position(|i| *i == id)
    }

    pub fn state(&self, id: StateId) -> Option<&NavState> {
        self.index_of(id).map(|i| &self.states[i])
    }

    pub fn set_state(&mut self, id: StateId, x: NavState) -> Result<()> {
        let i = self.index_of(id).ok_or_else(|| Error::InvalidArgument(format!("state {id} not in window")))?;
        self.states[i] = x;
        Ok(())
    }

    /// Appends a state without any factor. The window must have room.
    pub fn add_state(&mut self, x: NavState) -> Result<StateId> {
        if self.states.len() >= self.capacity {
            return Err(Error::InvalidArgument("window full; marginalize first".into()));
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument("state must be finite".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.ids.push(id);
        self.states.push(x);
        Ok(id)
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<()> {
        if let Some(id) = factor.states().into_iter().find(|id| self.index_of(*id).is_none()) {
            return Err(Error::InvalidArgument(format!("{} references state {id} outside the window", factor.describe())));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn factor_counts(&self) -> BTreeMap<FactorKind, usize> {
        let mut m = BTreeMap::new();
        for f in &self.factors {
            *m.entry(f.kind()).or_insert(0) += 1;
        }
        m
    }

    /// One pseudorange factor per observation of `epoch` on state `id`.
    pub fn add_pseudorange_factors(&mut self, id: StateId, epoch: &GnssEpoch, noise: PseudorangeNoise) -> Result<usize> {
        let mut n = 0;
        for (sat_id, obs) in &epoch.observations {
            let sat = epoch
                .sat_states
                .get(sat_id)
                .ok_or_else(|| Error::InvalidArgument(format!("satellite {sat_id} has no satellite state")))?;
            self.add_factor(Factor::Pseudorange { state: id, observation: *obs, satellite: *sat, noise })?;
            n += 1;
        }
        Ok(n)
    }

    /// Appends the state of a new GNSS epoch, predicted from the newest
    /// state through the IMU, with all of its factors. The oldest state is
    /// marginalized first when the window is full.
    pub fn add_epoch(&mut self, inputs: EpochInputs) -> Result<StateId> {
        let Some((prev_id, prev)) = self.newest().map(|(i, x)| (i, *x)) else {
            return Err(Error::NotInitialized);
        };
        if inputs.gnss.timestamp <= prev.timestamp {
            return Err(Error::NonMonotonicTime { prev: prev.timestamp, next: inputs.gnss.timestamp });
        }
        if self.len() >= self.capacity {
            self.marginalize_oldest()?;
        }
        let mut predicted = inputs.imu.predict(&prev, &self.gravity);
        predicted.timestamp = inputs.gnss.timestamp;
        let id = self.add_state(predicted)?;
        let dt = inputs.gnss.timestamp - prev.timestamp;

        let imu_sqrt = sqrt_information_fixed(&inputs.imu.covariance);
        self.add_factor(Factor::Imu { from: prev_id, to: id, preintegration: inputs.imu, sqrt_information: imu_sqrt, gravity: self.gravity })?;
        self.add_factor(Factor::ClockDrift {
            from: prev_id,
            to: id,
            dt,
            sigma_bias: self.noise.clock_bias_sigma,
            sigma_drift: self.noise.clock_drift_sigma,
        })?;
        if let Some(radar) = inputs.radar {
            let sqrt = sqrt_information_fixed(&radar.covariance);
            self.add_factor(Factor::RadarVelocity { from: prev_id, to: id, preintegration: radar, sqrt_information: sqrt })?;
        }
        self.add_pseudorange_factors(id, &inputs.gnss, inputs.pseudorange_noise)?;
        for (m, s0, s1) in inputs.tdcp {
            if !m.accepted {
                return Err(Error::UnacceptedTdcp(format!("satellite {} at t = {}", m.sat_id, m.epoch_pair.1)));
            }
            self.add_factor(Factor::Tdcp { from: prev_id, to: id, measurement: m, satellites: (s0, s1), sigma: self.noise.tdcp_sigma })?;
        }
        Ok(id)
    }

    pub(crate) fn linearize_all(&self, states: &[NavState]) -> Result<Vec<FactorLinearization>> {
        let lookup = |id: StateId| -> &NavState { &states[self.index_of(id).expect("factor state in window")] };
        self.factors.iter().map(|f| f.linearize(&lookup, &self.frames)).collect()
    }

    pub(crate) fn cost_at(&self, states: &[NavState]) -> Result<f64> {
        Ok(self.linearize_all(states)?.iter().map(|l| l.cost).sum())
    }

    pub fn total_cost(&self) -> Result<f64> {
        self.cost_at(&self.states)
    }

    /// Dense normal equations `H = JᵀJ`, `g = Jᵀr` over the whole window.
    pub(crate) fn normal_equations(&self, lins: &[FactorLinearization]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.len() * STATE_DIM;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for lin in lins {
            for (ia, ja) in &lin.blocks {
                let a = self.index_of(*ia).unwrap() * STATE_DIM;
                let jat = ja.transpose();
                g.rows_mut(a, STATE_DIM).axpy(1.0, &(&jat * &lin.residual), 1.0);
                for (ib, jb) in &lin.blocks {
                    let b = self.index_of(*ib).unwrap() * STATE_DIM;
                    let mut blk = h.view_mut((a, b), (STATE_DIM, STATE_DIM));
                    blk += &jat * jb;
                }
            }
        }
        (h, g)
    }
}
