//! Geometric pure-pursuit path tracking with proportional speed control.

use super::track::{StepInfo, TrackingController};
use crate::error::{DdkError, Result};
use crate::sim::vehicle::{Control, VehicleParams, VehicleState, SWA_LIMIT};

#[derive(Debug, Clone)]
pub struct PurePursuit {
    /// Preview gain: the preview distance is `k_d · v_ref`.
    pub k_d: f64,
    pub v_ref: f64,
    pub wheelbase: f64,
    pub steering_ratio: f64,
    /// Engine command per m/s of speed error.
    pub speed_gain: f64,
    /// Path geometry; only positions are used.
    pub path: Vec<VehicleState>,
    /// Index of the closest path point found so far (search moves forward).
    cursor: usize,
}

impl PurePursuit {
    pub fn new(path: Vec<VehicleState>, k_d: f64, v_ref: f64, params: &VehicleParams) -> Result<Self> {
        if path.is_empty() {
            return Err(DdkError::InvalidInput("pure pursuit needs a non-empty path".into()));
        }
        if !(k_d > 0.0 && v_ref > 0.0) {
            return Err(DdkError::InvalidInput("preview gain and speed must be positive".into()));
        }
        Ok(PurePursuit {
            k_d,
            v_ref,
            wheelbase: params.wheelbase(),
            steering_ratio: params.steering_ratio,
            speed_gain: 0.5,
            path,
            cursor: 0,
        })
    }

    pub fn preview_distance(&self) -> f64 {
        self.k_d * self.v_ref
    }

    /// Steering and engine command for `state`.
    pub fn command(&mut self, state: &VehicleState) -> Control {
        let d2 = |p: &VehicleState| (p.x - state.x).powi(2) + (p.y - state.y).powi(2);
        // Closest point, searched forward from the previous one.
        let mut best = self.cursor;
        let mut best_d = d2(&self.path[best]);
        let window_end = (self.cursor + 500).min(self.path.len());
        for i in self.cursor..window_end {
            let d = d2(&self.path[i]);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        self.cursor = best;
        let ld = self.preview_distance();
        let target = self.path[best..]
            .iter()
            .find(|p| d2(p) >= ld * ld)
            .unwrap_or_else(|| self.path.last().unwrap());
        let (s, c) = state.psi.sin_cos();
        let dx = target.x - state.x;
        let dy = target.y - state.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let alpha = ly.atan2(lx);
        let dist = lx.hypot(ly).max(1e-6);
        let delta = (2.0 * self.wheelbase * alpha.sin() / dist).atan();
        let swa = (delta * self.steering_ratio).clamp(-SWA_LIMIT, SWA_LIMIT);
        let engine = (self.speed_gain * (self.v_ref - state.vx)).clamp(-1.0, 1.0);
        Control::new(swa, engine)
    }
}

impl TrackingController for PurePursuit {
    fn control(&mut self, history: &[VehicleState], _upcoming: &[VehicleState], _t: usize) -> Result<StepInfo> {
        let state = history
            .last()
            .ok_or_else(|| DdkError::InvalidInput("no current state".into()))?;
        Ok(StepInfo {
            control: self.command(state),
            du_norm: 0.0,
            eps: 0.0,
            qp_iters: 0,
            solve_ms: 0.0,
            converged: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::vehicle::step;

    #[test]
    fn straight_ahead_needs_no_steering() {
        let path: Vec<VehicleState> = (0..100)
            .map(|k| VehicleState::new(k as f64 * 0.5, 0.0, 0.0, 7.0, 0.0, 0.0))
            .collect();
        let mut pp = PurePursuit::new(path, 0.2, 7.0, &VehicleParams::default()).unwrap();
        let c = pp.command(&VehicleState::new(0.0, 0.0, 0.0, 7.0, 0.0, 0.0));
        assert_eq!(c.swa, 0.0);
        assert!((pp.preview_distance() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn empty_path_rejected() {
        assert!(PurePursuit::new(vec![], 0.2, 7.0, &VehicleParams::default()).is_err());
    }

    #[test]
    fn circle_steady_state_matches_geometry() {
        let params = VehicleParams::default();
        let radius = 30.0;
        let path: Vec<VehicleState> = (0..4000)
            .map(|k| {
                let a = k as f64 * 0.002;
                VehicleState::new(radius * a.sin(), radius * (1.0 - a.cos()), a, 7.0, 0.0, 0.0)
            })
            .collect();
        let mut pp = PurePursuit::new(path, 0.2, 7.0, &params).unwrap();
        let mut s = VehicleState::new(0.0, 0.0, 0.0, 7.0, 0.0, 0.0);
        let mut swa = 0.0;
        for _ in 0..1500 {
            let u = pp.command(&s);
            swa = u.swa;
            s = step(&params, &s, &u, 0.01).unwrap();
        }
        let geometric = (params.wheelbase() / radius).atan() * params.steering_ratio;
        assert!((swa - geometric).abs() < 0.1 * geometric, "{swa} vs {geometric}");
    }
}
