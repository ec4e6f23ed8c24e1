//! Tracking-error metrics for closed-loop logs.

use serde::{Deserialize, Serialize};

use super::prediction::REPORT_FORMAT_VERSION;
use crate::error::{DdkError, Result};
use crate::mpc::track::TrackingLog;
use crate::util::wrap_angle;

/// Mean and maximum of one error signal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return ErrorStats::default();
        }
        ErrorStats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub format_version: u32,
    pub controller: String,
    pub steps: usize,
    pub diverged: bool,
    /// Distance to the time-indexed reference point.
    pub p2p: ErrorStats,
    /// Distance to the nearest reference sample point.
    pub lateral: ErrorStats,
    pub heading: ErrorStats,
    pub vx: ErrorStats,
    pub vy: ErrorStats,
    pub yaw_rate: ErrorStats,
    pub solve_ms: ErrorStats,
    pub qp_iters_mean: f64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

/// Per-step point-to-point and lateral errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepErrors {
    pub p2p: Vec<f64>,
    pub lateral: Vec<f64>,
}

/// Distance from `p` to the nearest of the `path` sample points.
pub fn path_distance(p: (f64, f64), path: &[(f64, f64)]) -> f64 {
    path.iter()
        .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
        .fold(f64::INFINITY, f64::min)
}

pub fn step_errors(log: &TrackingLog) -> StepErrors {
    let path: Vec<(f64, f64)> = log.rows.iter().map(|r| (r.reference.x, r.reference.y)).collect();
    let mut out = StepErrors::default();
    for row in &log.rows {
        let p = (row.state.x, row.state.y);
        out.p2p.push((p.0 - row.reference.x).hypot(p.1 - row.reference.y));
        out.lateral.push(path_distance(p, &path));
    }
    out
}

/// Summarises a tracking log. Hashes are left empty for the caller to fill.
pub fn tracking_errors(log: &TrackingLog, controller: &str) -> Result<TrackingReport> {
    if log.rows.is_empty() {
        return Err(DdkError::InvalidInput("tracking log has no rows".into()));
    }
    let errs = step_errors(log);
    let col = |f: &dyn Fn(&crate::mpc::track::TrackingRow) -> f64| -> Vec<f64> { log.rows.iter().map(f).collect() };
    let report = TrackingReport {
        format_version: REPORT_FORMAT_VERSION,
        controller: controller.to_string(),
        steps: log.rows.len(),
        diverged: log.diverged,
        p2p: ErrorStats::of(&errs.p2p),
        lateral: ErrorStats::of(&errs.lateral),
        heading: ErrorStats::of(&col(&|r| wrap_angle(r.state.psi - r.reference.psi).abs())),
        vx: ErrorStats::of(&col(&|r| (r.state.vx - r.reference.vx).abs())),
        vy: ErrorStats::of(&col(&|r| (r.state.vy - r.reference.vy).abs())),
        yaw_rate: ErrorStats::of(&col(&|r| (r.state.r - r.reference.r).abs())),
        solve_ms: ErrorStats::of(&col(&|r| r.solve_ms)),
        qp_iters_mean: col(&|r| r.qp_iters as f64).iter().sum::<f64>() / log.rows.len() as f64,
        config_hash: String::new(),
        checkpoint_hash: String::new(),
    };
    let values = [
        report.p2p.mean,
        report.lateral.mean,
        report.heading.mean,
        report.vx.mean,
        report.vy.mean,
        report.yaw_rate.mean,
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DdkError::NumericDomain("tracking errors are not finite".into()));
    }
    Ok(report)
}
