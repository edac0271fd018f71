//! Trajectory accuracy metrics against ground truth.

use nalgebra::{UnitQuaternion, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesy::{geodetic_to_ecef, rotation_ecef_from_enu, GeodeticPoint};
use crate::math::{euler_angles, wrap_angle};

/// Estimates further than this from any truth sample are unmatched, seconds.
pub const MATCH_TOLERANCE: f64 = 0.01;
/// Minimum fraction of estimates that must find a truth sample.
pub const MIN_OVERLAP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// ENU, meters
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub matched: usize,
    /// East, North, Up
    pub mae: [f64; 3],
    pub rmse: [f64; 3],
    pub rmse_2d: f64,
    /// Roll, pitch, yaw RMSE, radians.
    pub attitude_rmse: [f64; 3],
    #[serde(skip)]
    pub position_errors: Vec<(f64, Vector3<f64>)>,
    #[serde(skip)]
    pub attitude_errors: Vec<(f64, Vector3<f64>)>,
}

/// Re-expresses an ENU trajectory anchored at `from` in the ENU frame
/// anchored at `to`.
pub fn reanchor(points: &[TrajectoryPoint], from: &GeodeticPoint, to: &GeodeticPoint) -> Vec<TrajectoryPoint> {
    if from == to {
        return points.to_vec();
    }
    let r_from = rotation_ecef_from_enu(from);
    let r_to = rotation_ecef_from_enu(to);
    let offset = geodetic_to_ecef(from) - geodetic_to_ecef(to);
    let r = r_to.transpose() * r_from;
    let rq = UnitQuaternion::from_matrix(&r);
    points
        .iter()
        .map(|p| TrajectoryPoint {
            t: p.t,
            position: r_to.transpose() * offset + r * p.position,
            orientation: rq * p.orientation,
        })
        .collect()
}

/// Matches every estimate to the nearest truth sample in time and computes
/// per-axis MAE/RMSE, horizontal RMSE and attitude errors. Both
/// trajectories are brought into the truth ENU frame first.
pub fn evaluate(
    estimate: &[TrajectoryPoint],
    estimate_origin: &GeodeticPoint,
    truth: &[TrajectoryPoint],
    truth_origin: &GeodeticPoint,
) -> Result<Metrics> {
    if estimate.is_empty() || truth.is_empty() {
        return Err(Error::InsufficientOverlap(0.0));
    }
    let est = reanchor(estimate, estimate_origin, truth_origin);
    let mut truth_sorted = truth.to_vec();
    truth_sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut position_errors = Vec::new();
    let mut attitude_errors = Vec::new();
    for e in &est {
        let i = truth_sorted.partition_point(|p| p.t < e.t);
        let candidates = [i.checked_sub(1), Some(i)];
        let nearest = candidates
            .iter()
            .flatten()
            .filter_map(|&k| truth_sorted.get(k))
            .min_by(|a, b| (a.t - e.t).abs().total_cmp(&(b.t - e.t).abs()));
        let Some(g) = nearest.filter(|g| (g.t - e.t).abs() <= MATCH_TOLERANCE) else { continue };
        position_errors.push((e.t, e.position - g.position));
        let de = euler_angles(&e.orientation) - euler_angles(&g.orientation);
        attitude_errors.push((e.t, de.map(wrap_angle)));
    }
    let fraction = position_errors.len() as f64 / est.len() as f64;
    if fraction < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap(fraction));
    }
    let n = position_errors.len() as f64;
    let mut mae = [0.0; 3];
    let mut rmse = [0.0; 3];
    let mut att = [0.0; 3];
    for (_, d) in &position_errors {
        for k in 0..3 {
            mae[k] += d[k].abs() / n;
            rmse[k] += d[k] * d[k] / n;
        }
    }
    for (_, d) in &attitude_errors {
        for k in 0..3 {
            att[k] += d[k] * d[k] / n;
        }
    }
    let rmse_2d = (rmse[0] + rmse[1]).sqrt();
    Ok(Metrics {
        matched: position_errors.len(),
        mae,
        rmse: rmse.map(f64::sqrt),
        rmse_2d,
        attitude_rmse: att.map(f64::sqrt),
        position_errors,
        attitude_errors,
    })
}
