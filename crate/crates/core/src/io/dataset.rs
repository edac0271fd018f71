//! Line-delimited JSON dataset and ground-truth streams.
//!
//! Each line is one object with a `type` tag (`imu`, `radar_scan`,
//! `gnss_epoch`, `ground_truth`) and a timestamp `t`. Numbers are written in
//! shortest round-trip decimal form, so a write/read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeodeticPoint;
use crate::gnss::{GnssEpoch, SatId, SatelliteObservation, SatelliteState};
use crate::imu::ImuSample;
use crate::radar::{RadarPoint, RadarScan};
use crate::state::NavState;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRecord {
    pub position: [f64; 3],
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub sat_id: SatId,
    pub pseudorange: f64,
    pub carrier_phase: Option<f64>,
    pub doppler: Option<f64>,
    pub snr: f64,
    pub wavelength: f64,
    pub sat_position: [f64; 3],
    pub sat_clock_error: f64,
    pub tropo_delay: f64,
    pub iono_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Imu {
        t: f64,
        accel: [f64; 3],
        gyro: [f64; 3],
    },
    RadarScan {
        t: f64,
        points: Vec<PointRecord>,
    },
    GnssEpoch {
        t: f64,
        observations: Vec<ObservationRecord>,
    },
    GroundTruth {
        t: f64,
        position: [f64; 3],
        velocity: [f64; 3],
        /// w, x, y, z
        orientation: [f64; 4],
        accel_bias: [f64; 3],
        gyro_bias: [f64; 3],
        clock_bias: f64,
        clock_drift: f64,
        /// latitude°, longitude°, height m
        enu_origin: [f64; 3],
    },
}

const KNOWN_TYPES: [&str; 4] = ["imu", "radar_scan", "gnss_epoch", "ground_truth"];

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Imu { t, .. } | Record::RadarScan { t, .. } | Record::GnssEpoch { t, .. } | Record::GroundTruth { t, .. } => *t,
        }
    }

    fn type_rank(&self) -> u8 {
        match self {
            Record::Imu { .. } => 0,
            Record::RadarScan { .. } => 1,
            Record::GnssEpoch { .. } => 2,
            Record::GroundTruth { .. } => 3,
        }
    }

    pub fn from_imu(s: &ImuSample) -> Self {
        Record::Imu { t: s.timestamp, accel: s.accel.into(), gyro: s.gyro.into() }
    }

    pub fn from_radar(s: &RadarScan) -> Self {
        Record::RadarScan {
            t: s.timestamp,
            points: s.points.iter().map(|p| PointRecord { position: p.position.into(), doppler: p.doppler }).collect(),
        }
    }

    pub fn from_gnss(e: &GnssEpoch) -> Self {
        Record::GnssEpoch {
            t: e.timestamp,
            observations: e
                .observations
                .iter()
                .map(|(id, o)| {
                    let s = &e.sat_states[id];
                    ObservationRecord {
                        sat_id: *id,
                        pseudorange: o.pseudorange,
                        carrier_phase: o.carrier_phase,
                        doppler: o.doppler,
                        snr: o.snr,
                        wavelength: o.wavelength,
                        sat_position: s.position_ecef.into(),
                        sat_clock_error: s.clock_error,
                        tropo_delay: s.tropo_delay,
                        iono_delay: s.iono_delay,
                    }
                })
                .collect(),
        }
    }

    pub fn from_truth(x: &NavState, origin: &GeodeticPoint) -> Self {
        let q = x.orientation.quaternion();
        Record::GroundTruth {
            t: x.timestamp,
            position: x.position.into(),
            velocity: x.velocity.into(),
            orientation: [q.w, q.i, q.j, q.k],
            accel_bias: x.accel_bias.into(),
            gyro_bias: x.gyro_bias.into(),
            clock_bias: x.clock_bias,
            clock_drift: x.clock_drift,
            enu_origin: [origin.latitude.to_degrees(), origin.longitude.to_degrees(), origin.height],
        }
    }
}

/// Sorts by time, ties broken imu < radar_scan < gnss_epoch < ground_truth.
pub fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.type_rank().cmp(&b.type_rank())));
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads all records, skipping unknown `type` values with a warning.
/// Errors name the file and 1-based line number.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.display().to_string(), line: line_no, msg };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let kind = value.get("type").and_then(|t| t.as_str()).ok_or_else(|| parse_err("missing \"type\" field".into()))?;
        if !KNOWN_TYPES.contains(&kind) {
            log::warn!("{}:{line_no}: skipping record of unknown type {kind:?}", path.display());
            continue;
        }
        let record: Record = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if !record.t().is_finite() {
            return Err(parse_err("non-finite timestamp".into()));
        }
        out.push(record);
    }
    Ok(out)
}

/// Sensor streams of one run, each sorted by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub gnss: Vec<GnssEpoch>,
}

impl Dataset {
    pub fn to_records(&self) -> Vec<Record> {
        let mut r: Vec<Record> = self
            .imu
            .iter()
            .map(Record::from_imu)
            .chain(self.radar.iter().map(Record::from_radar))
            .chain(self.gnss.iter().map(Record::from_gnss))
            .collect();
        sort_records(&mut r);
        r
    }

    pub fn from_records(records: Vec<Record>, path: &Path) -> Result<Self> {
        let mut d = Dataset::default();
        for r in records {
            match r {
                Record::Imu { t, accel, gyro } => d.imu.push(ImuSample::new(t, Vector3::from(accel), Vector3::from(gyro))),
                Record::RadarScan { t, points } => d.radar.push(RadarScan {
                    timestamp: t,
                    points: points.into_iter().map(|p| RadarPoint { position: Vector3::from(p.position), doppler: p.doppler }).collect(),
                }),
                Record::GnssEpoch { t, observations } => {
                    let mut e = GnssEpoch { timestamp: t, ..Default::default() };
                    for o in observations {
                        e.observations.insert(
                            o.sat_id,
                            SatelliteObservation {
                                sat_id: o.sat_id,
                                pseudorange: o.pseudorange,
                                carrier_phase: o.carrier_phase,
                                doppler: o.doppler,
                                snr: o.snr,
                                wavelength: o.wavelength,
                            },
                        );
                        e.sat_states.insert(
                            o.sat_id,
                            SatelliteState {
                                position_ecef: Vector3::from(o.sat_position),
                                clock_error: o.sat_clock_error,
                                tropo_delay: o.tropo_delay,
                                iono_delay: o.iono_delay,
                            },
                        );
                    }
                    e.validate().map_err(|err| Error::Parse { path: path.display().to_string(), line: 0, msg: format!("gnss epoch t = {t}: {err}") })?;
                    d.gnss.push(e);
                }
                Record::GroundTruth { .. } => {}
            }
        }
        let order = |what: &str, ts: Vec<f64>| -> Result<()> {
            match ts.windows(2).find(|w| w[1] <= w[0]) {
                Some(w) => Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    msg: format!("{what} timestamps not strictly increasing ({} then {})", w[0], w[1]),
                }),
                None => Ok(()),
            }
        };
        d.imu.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        d.radar.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        d.gnss.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        order("imu", d.imu.iter().map(|s| s.timestamp).collect())?;
        order("radar_scan", d.radar.iter().map(|s| s.timestamp).collect())?;
        order("gnss_epoch", d.gnss.iter().map(|s| s.timestamp).collect())?;
        Ok(d)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_records(path, &self.to_records())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_records(read_records(path)?, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub enu_origin: GeodeticPoint,
    pub states: Vec<NavState>,
}

impl GroundTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let records: Vec<Record> = self.states.iter().map(|x| Record::from_truth(x, &self.enu_origin)).collect();
        write_records(path, &records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut origin = None;
        let mut states = Vec::new();
        for r in read_records(path)? {
            if let Record::GroundTruth { t, position, velocity, orientation, accel_bias, gyro_bias, clock_bias, clock_drift, enu_origin } = r {
                origin.get_or_insert(enu_origin);
                let [w, x, y, z] = orientation;
                states.push(NavState {
                    timestamp: t,
                    position: Vector3::from(position),
                    velocity: Vector3::from(velocity),
                    orientation: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
                    accel_bias: Vector3::from(accel_bias),
                    gyro_bias: Vector3::from(gyro_bias),
                    clock_bias,
                    clock_drift,
                });
            }
        }
        let o = origin.ok_or_else(|| Error::EmptyInput(format!("{}: no ground_truth records", path.display())))?;
        Ok(Self { enu_origin: GeodeticPoint::from_degrees(o[0], o[1], o[2])?, states })
    }
}
