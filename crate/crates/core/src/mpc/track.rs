//! Closed-loop tracking runs and their logs.

use std::fs::File;
use std::path::Path;

use super::config::MpcConfig;
use super::controller::MpcController;
use crate::error::{DdkError, Result};
use crate::koopman::model::LatentModel;
use crate::sim::reference::ReferenceTrajectory;
use crate::sim::vehicle::{step, Control, VehicleParams, VehicleState, CONTROL_DIM};

pub const TRACKING_HEADER: [&str; 18] = [
    "t", "x_ref", "y_ref", "psi_ref", "vx_ref", "vy_ref", "r_ref", "x", "y", "psi", "vx", "vy", "r", "swa", "engine",
    "eps", "qp_iters", "solve_ms",
];

/// Runs stop once the vehicle is this far from the current reference point.
pub const DIVERGENCE_DISTANCE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRow {
    pub t: f64,
    pub reference: VehicleState,
    pub state: VehicleState,
    /// Control applied from this row's state to the next one.
    pub control: Control,
    /// Max-norm of the increment applied this step (normalized units).
    pub du_norm: f64,
    pub eps: f64,
    pub qp_iters: usize,
    pub solve_ms: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingLog {
    pub rows: Vec<TrackingRow>,
    /// Set when the run stopped early on divergence.
    pub diverged: bool,
}

impl TrackingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DdkError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| DdkError::parse(path, e);
        w.write_record(TRACKING_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(18);
            rec.push(format!("{}", r.t));
            rec.extend(r.reference.to_array().iter().map(|v| format!("{v}")));
            rec.extend(r.state.to_array().iter().map(|v| format!("{v}")));
            rec.push(format!("{}", r.control.swa));
            rec.push(format!("{}", r.control.engine_physical()));
            rec.push(format!("{}", r.eps));
            rec.push(format!("{}", r.qp_iters));
            rec.push(format!("{}", r.solve_ms));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DdkError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| DdkError::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let headers = r.headers().map_err(|e| DdkError::parse(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACKING_HEADER {
            return Err(DdkError::parse(path, format!("unexpected header {:?}", headers)));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| DdkError::parse(path, e))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DdkError::parse(path, format!("row {}: {e}", i + 1)))?;
            if v.len() != 18 {
                return Err(DdkError::parse(path, format!("row {} has {} fields", i + 1, v.len())));
            }
            rows.push(TrackingRow {
                t: v[0],
                reference: VehicleState::new(v[1], v[2], v[3], v[4], v[5], v[6]),
                state: VehicleState::new(v[7], v[8], v[9], v[10], v[11], v[12]),
                control: Control::from_physical(v[13], v[14]),
                du_norm: 0.0,
                eps: v[15],
                qp_iters: v[16] as usize,
                solve_ms: v[17],
                converged: true,
            });
        }
        Ok(TrackingLog { rows, diverged: false })
    }
}

fn planar_distance(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Anything that produces a plant command from the recent history and the
/// upcoming reference.
pub trait TrackingController {
    /// `history` ends with the current state; `upcoming` starts at the
    /// reference point for the next sample.
    fn control(&mut self, history: &[VehicleState], upcoming: &[VehicleState], t_index: usize) -> Result<StepInfo>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub control: Control,
    pub du_norm: f64,
    pub eps: f64,
    pub qp_iters: usize,
    pub solve_ms: f64,
    pub converged: bool,
}

/// The DDK controller with its previous control carried between steps.
pub struct MpcTracker {
    pub controller: MpcController,
    pub u_prev: [f64; CONTROL_DIM],
}

impl MpcTracker {
    pub fn new(model: LatentModel, cfg: MpcConfig) -> Result<Self> {
        Ok(MpcTracker {
            controller: MpcController::new(model, cfg)?,
            u_prev: [0.0; CONTROL_DIM],
        })
    }
}

impl TrackingController for MpcTracker {
    fn control(&mut self, history: &[VehicleState], upcoming: &[VehicleState], _t: usize) -> Result<StepInfo> {
        let out = self.controller.step(history, upcoming, &self.u_prev)?;
        let du_norm = (0..CONTROL_DIM)
            .map(|c| (out.u_norm[c] - self.u_prev[c]).abs())
            .fold(0.0, f64::max);
        self.u_prev = out.u_norm;
        Ok(StepInfo {
            control: out.control,
            du_norm,
            eps: out.eps,
            qp_iters: out.iterations,
            solve_ms: out.solve_ms,
            converged: out.converged,
        })
    }
}

/// Runs `controller` on the plant from the reference's first state. Row `k`
/// pairs the plant state at `t_k` with reference point `k`; the reference
/// index advances by one per step whatever the tracking error.
pub fn track_with<C: TrackingController>(
    controller: &mut C,
    params: &VehicleParams,
    reference: &ReferenceTrajectory,
    horizon: usize,
    history_len: usize,
) -> Result<TrackingLog> {
    let mut log = TrackingLog::default();
    let Some(first) = reference.states.first() else {
        return Ok(log);
    };
    let n = reference.len();
    let mut state = *first;
    let mut history: Vec<VehicleState> = vec![state];
    for k in 0..n {
        let r = reference.states[k];
        if planar_distance(&state, &r) > DIVERGENCE_DISTANCE || !state.is_finite() {
            log.diverged = true;
            break;
        }
        let upcoming: &[VehicleState] = if k + 1 < n {
            &reference.states[k + 1..(k + 1 + horizon).min(n)]
        } else {
            &reference.states[n - 1..]
        };
        let info = controller.control(&history, upcoming, k)?;
        log.rows.push(TrackingRow {
            t: k as f64 * reference.dt,
            reference: r,
            state,
            control: info.control,
            du_norm: info.du_norm,
            eps: info.eps,
            qp_iters: info.qp_iters,
            solve_ms: info.solve_ms,
            converged: info.converged,
        });
        state = step(params, &state, &info.control, reference.dt)?;
        history.push(state);
        if history.len() > history_len.max(1) {
            history.remove(0);
        }
    }
    Ok(log)
}

/// DDK-MPC tracking run.
pub fn track(
    model: &LatentModel,
    params: &VehicleParams,
    reference: &ReferenceTrajectory,
    cfg: &MpcConfig,
) -> Result<TrackingLog> {
    let frames = model.shape.frames;
    let mut tracker = MpcTracker::new(model.clone(), cfg.clone())?;
    track_with(&mut tracker, params, reference, cfg.np, frames)
}
