//! Estimated trajectories as comma-separated text.
//!
//! The first line is `# enu_origin,<lat°>,<lon°>,<height m>`, the second the
//! column header, then one row per state.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geodesy::GeodeticPoint;
use crate::state::NavState;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const HEADER: &str = "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,bax,bay,baz,bgx,bgy,bgz,clock_bias,clock_drift";
const ORIGIN_TAG: &str = "# enu_origin";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub enu_origin: GeodeticPoint,
    pub states: Vec<NavState>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let o = &self.enu_origin;
        let mut s = format!("{ORIGIN_TAG},{},{},{}\n{HEADER}\n", o.latitude.to_degrees(), o.longitude.to_degrees(), o.height);
        for x in &self.states {
            let q = x.orientation.quaternion();
            let cols: Vec<f64> = std::iter::once(x.timestamp)
                .chain(x.position.iter().copied())
                .chain(x.velocity.iter().copied())
                .chain([q.w, q.i, q.j, q.k])
                .chain(x.accel_bias.iter().copied())
                .chain(x.gyro_bias.iter().copied())
                .chain([x.clock_bias, x.clock_drift])
                .collect();
            let row: Vec<String> = cols.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_string(), line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let origin = first
            .strip_prefix(ORIGIN_TAG)
            .and_then(|rest| rest.strip_prefix(','))
            .ok_or_else(|| err(n, format!("expected \"{ORIGIN_TAG},lat,lon,height\"")))?;
        let o = parse_row(origin, 3).map_err(|m| err(n, m))?;
        let enu_origin = GeodeticPoint::from_degrees(o[0], o[1], o[2]).map_err(|e| err(n, e.to_string()))?;
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            Some((n, _)) => return Err(err(n, "unexpected column header".into())),
            None => return Err(err(n + 1, "missing column header".into())),
        }
        let mut states = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_row(line, 19).map_err(|m| err(n, m))?;
            let q = Quaternion::new(v[7], v[8], v[9], v[10]);
            if !(q.norm() > 0.5) {
                return Err(err(n, "orientation quaternion is not unit length".into()));
            }
            states.push(NavState {
                timestamp: v[0],
                position: Vector3::new(v[1], v[2], v[3]),
                velocity: Vector3::new(v[4], v[5], v[6]),
                orientation: UnitQuaternion::from_quaternion(q),
                accel_bias: Vector3::new(v[11], v[12], v[13]),
                gyro_bias: Vector3::new(v[14], v[15], v[16]),
                clock_bias: v[17],
                clock_drift: v[18],
            });
        }
        Ok(Self { enu_origin, states })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

fn parse_row(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(format!("expected {expected} columns, found {}", fields.len()));
    }
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("column {}: cannot parse {f:?} as a finite number", i + 1)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut x = NavState::at_rest(0.1);
        x.position = Vector3::new(1.0 / 3.0, -2.5e-7, 1234.5678901234);
        x.orientation = UnitQuaternion::from_euler_angles(0.01, -0.02, 2.9);
        x.clock_bias = 149.99999999;
        Trajectory { enu_origin: GeodeticPoint::from_degrees(30.5, 114.3, 20.0).unwrap(), states: vec![x] }
    }

    #[test]
    fn round_trip_is_lossless() {
        let t = sample();
        let back = Trajectory::from_csv(&t.to_csv(), "mem").unwrap();
        assert_eq!(back.states[0].position, t.states[0].position);
        assert_eq!(back.states[0].clock_bias, t.states[0].clock_bias);
        assert!(back.states[0].orientation.angle_to(&t.states[0].orientation) < 1e-15);
        assert!((back.enu_origin.latitude - t.enu_origin.latitude).abs() < 1e-15);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = sample().to_csv();
        text.push_str("0.2,1,2\n");
        match Trajectory::from_csv(&text, "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
