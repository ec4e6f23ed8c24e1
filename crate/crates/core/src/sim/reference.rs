//! Reference trajectories for closed-loop tracking.

use std::fs::File;
use std::path::Path;

use rand::Rng;

use super::dataset::Episode;
use super::vehicle::{step, Control, VehicleParams, VehicleState, SWA_LIMIT};
use crate::error::{DdkError, Result};
use crate::util::rng_from_seed;

pub const REFERENCE_HEADER: [&str; 7] = ["t", "x", "y", "psi", "vx", "vy", "r"];

/// Time-indexed global states at a fixed sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub states: Vec<VehicleState>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Rows `start .. start + len` of a recorded episode.
    pub fn from_episode(ep: &Episode, start: usize, len: usize) -> Result<Self> {
        if start + len > ep.len() {
            return Err(DdkError::InvalidInput(format!(
                "episode has {} rows, need {}",
                ep.len(),
                start + len
            )));
        }
        Ok(ReferenceTrajectory {
            dt: ep.dt,
            states: ep.states[start..start + len].to_vec(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DdkError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| DdkError::parse(path, e);
        w.write_record(REFERENCE_HEADER).map_err(csv_err)?;
        for (k, s) in self.states.iter().enumerate() {
            let t = k as f64 * self.dt;
            let rec: Vec<String> = std::iter::once(t).chain(s.to_array()).map(|v| format!("{v}")).collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DdkError::io(path, e))
    }

    /// Reads a reference CSV; `dt` comes from the first two time stamps
    /// (10 ms when there is only one row).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| DdkError::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let headers = r.headers().map_err(|e| DdkError::parse(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != REFERENCE_HEADER {
            return Err(DdkError::parse(path, format!("unexpected header {:?}", headers)));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| DdkError::parse(path, e))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DdkError::parse(path, format!("row {}: {e}", i + 1)))?;
            if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
                return Err(DdkError::parse(
                    path,
                    format!("row {}: expected 7 finite fields", i + 1),
                ));
            }
            times.push(v[0]);
            states.push(VehicleState::new(v[1], v[2], v[3], v[4], v[5], v[6]));
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.01 };
        if !(dt > 0.0) {
            return Err(DdkError::parse(path, "time stamps must increase"));
        }
        Ok(ReferenceTrajectory { dt, states })
    }
}

/// Settings of the scripted reference driver.
#[derive(Debug, Clone)]
pub struct ReferenceDriver {
    pub params: VehicleParams,
    pub dt: f64,
    /// Straight and turn segment durations (s).
    pub segment_s: (f64, f64),
    /// Target speed range (m/s).
    pub speed: (f64, f64),
    /// Lateral acceleration range in turns (m/s²).
    pub lateral_acc: (f64, f64),
    /// First-order lag on the steering and speed targets (s).
    pub smoothing_s: f64,
    pub speed_gain: f64,
}

impl Default for ReferenceDriver {
    fn default() -> Self {
        ReferenceDriver {
            params: VehicleParams::default(),
            dt: 0.01,
            segment_s: (2.0, 5.0),
            speed: (7.0, 15.0),
            lateral_acc: (1.5, 3.5),
            smoothing_s: 0.6,
            speed_gain: 0.3,
        }
    }
}

impl ReferenceDriver {
    /// Drives the plant through alternating straights and turns of random
    /// direction for `steps` samples and records the states.
    pub fn generate(&self, steps: usize, seed: u64) -> Result<ReferenceTrajectory> {
        let mut rng = rng_from_seed(seed);
        let p = &self.params;
        let v0 = rng.gen_range(self.speed.0..self.speed.1);
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut s = VehicleState::new(0.0, 0.0, heading, v0, 0.0, 0.0);
        let mut states = Vec::with_capacity(steps);
        let mut seg_left = 0usize;
        let mut turning = true;
        let mut target_acc = 0.0;
        let mut target_speed = v0;
        let (mut swa_f, mut speed_f) = (0.0, v0);
        let lag = (self.dt / self.smoothing_s).min(1.0);
        for _ in 0..steps {
            states.push(s);
            if seg_left == 0 {
                turning = !turning;
                seg_left = (rng.gen_range(self.segment_s.0..self.segment_s.1) / self.dt) as usize;
                target_speed = rng.gen_range(self.speed.0..self.speed.1);
                target_acc = if turning {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    sign * rng.gen_range(self.lateral_acc.0..self.lateral_acc.1)
                } else {
                    0.0
                };
            }
            seg_left -= 1;
            let v = s.vx.max(1.0);
            let curvature = target_acc / (v * v);
            let swa_target = ((p.wheelbase() * curvature).atan() * p.steering_ratio).clamp(-SWA_LIMIT, SWA_LIMIT);
            swa_f += lag * (swa_target - swa_f);
            speed_f += lag * (target_speed - speed_f);
            let engine = (self.speed_gain * (speed_f - s.vx) + 0.05).clamp(-1.0, 1.0);
            s = step(p, &s, &Control::new(swa_f, engine), self.dt)?;
        }
        Ok(ReferenceTrajectory { dt: self.dt, states })
    }
}
