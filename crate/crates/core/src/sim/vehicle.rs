//! Dynamic bicycle model with arctangent-saturating lateral tire forces.
//!
//! State is `(x, y, psi, vx, vy, r)` with body-frame velocities; the control
//! is a steering-wheel angle and a signed, unitless engine command
//! (positive drives, negative brakes). Integration is classical RK4 on a
//! fixed internal substep no longer than [`MAX_SUBSTEP`].

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{DdkError, Result};
use crate::util::wrap_angle;

/// Number of state channels.
pub const STATE_DIM: usize = 6;
/// Number of control channels.
pub const CONTROL_DIM: usize = 2;
/// Steering-wheel angle limit (rad).
pub const SWA_LIMIT: f64 = 7.85;
/// Upper bound on the RK4 substep (s).
pub const MAX_SUBSTEP: f64 = 1e-3;

const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, vx: f64, vy: f64, r: f64) -> Self {
        VehicleState {
            x,
            y,
            psi: wrap_angle(psi),
            vx,
            vy,
            r,
        }
    }

    pub fn at_rest() -> Self {
        VehicleState::default()
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.psi, self.vx, self.vy, self.r]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        VehicleState::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Plant input. `engine` is a unitless command in `[-1, 1]`: positive values
/// are the fraction of full throttle, negative values the fraction of full
/// brake.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub swa: f64,
    pub engine: f64,
}

/// Throttle opening at full throttle command.
pub const THROTTLE_MAX: f64 = 0.2;
/// Brake pressure (MPa) at full brake command.
pub const BRAKE_PRESSURE_MAX: f64 = 10.0;

impl Control {
    pub fn new(swa: f64, engine: f64) -> Self {
        Control { swa, engine }
    }

    pub fn to_array(&self) -> [f64; CONTROL_DIM] {
        [self.swa, self.engine]
    }

    pub fn clamped(self) -> Self {
        Control {
            swa: self.swa.clamp(-SWA_LIMIT, SWA_LIMIT),
            engine: self.engine.clamp(-1.0, 1.0),
        }
    }

    /// Engine channel in recorded units: throttle opening in `[0, 0.2]` when
    /// driving, negated brake pressure in MPa (`[-10, 0]`) when braking.
    pub fn engine_physical(&self) -> f64 {
        if self.engine >= 0.0 {
            self.engine * THROTTLE_MAX
        } else {
            self.engine * BRAKE_PRESSURE_MAX
        }
    }

    /// Inverse of [`Control::engine_physical`].
    pub fn from_physical(swa: f64, engine_physical: f64) -> Self {
        let engine = if engine_physical >= 0.0 {
            engine_physical / THROTTLE_MAX
        } else {
            engine_physical / BRAKE_PRESSURE_MAX
        };
        Control { swa, engine }
    }

    fn validate(&self) -> Result<()> {
        if !self.swa.is_finite() || !self.engine.is_finite() {
            return Err(DdkError::NumericDomain(format!("control {:?}", self)));
        }
        if self.swa.abs() > SWA_LIMIT || self.engine.abs() > 1.0 {
            return Err(DdkError::InvalidInput(format!(
                "control {:?} outside bounds (|swa| <= {SWA_LIMIT}, |engine| <= 1)",
                self
            )));
        }
        Ok(())
    }
}

/// Physical constants of the substitute C-class sedan.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub cornering_front: f64,
    pub cornering_rear: f64,
    /// Tire-road friction coefficient; sets the lateral force saturation level.
    pub friction: f64,
    pub steering_ratio: f64,
    pub max_drive_force: f64,
    pub max_brake_force: f64,
    /// Aerodynamic drag, N per (m/s)^2.
    pub drag: f64,
    /// Rolling-resistance coefficient (dimensionless, times m*g).
    pub rolling: f64,
    /// Slip angles use `max(vx, min_slip_speed)` in the denominator.
    pub min_slip_speed: f64,
    /// Road-wheel angle fades in as `tanh(vx / steer_fade_speed)`.
    pub steer_fade_speed: f64,
    /// Brake and rolling resistance fade in as `tanh(vx / resist_fade_speed)`.
    pub resist_fade_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            lf: 1.2,
            lr: 1.4,
            cornering_front: 80_000.0,
            cornering_rear: 80_000.0,
            friction: 0.9,
            steering_ratio: 16.0,
            max_drive_force: 5_000.0,
            max_brake_force: 8_000.0,
            drag: 0.4,
            rolling: 0.015,
            min_slip_speed: 0.5,
            steer_fade_speed: 0.5,
            resist_fade_speed: 0.2,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.yaw_inertia,
            self.lf,
            self.lr,
            self.cornering_front,
            self.cornering_rear,
            self.friction,
            self.steering_ratio,
            self.max_drive_force,
            self.max_brake_force,
            self.drag,
            self.rolling,
            self.min_slip_speed,
            self.steer_fade_speed,
            self.resist_fade_speed,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(DdkError::InvalidInput(
                "vehicle parameters must be finite and strictly positive".into(),
            ))
        }
    }

    /// Saturating lateral force for one axle: slope `stiffness` at zero slip,
    /// asymptote `peak`.
    fn lateral_force(stiffness: f64, peak: f64, slip: f64) -> f64 {
        -peak / FRAC_PI_2 * (FRAC_PI_2 * stiffness * slip / peak).atan()
    }

    fn derivative(&self, s: &[f64; STATE_DIM], u: &Control) -> [f64; STATE_DIM] {
        let [_, _, psi, vx, vy, r] = *s;
        let m = self.mass;
        let l = self.wheelbase();

        let moving = vx.max(0.0);
        let delta = u.swa / self.steering_ratio * (moving / self.steer_fade_speed).tanh();
        let vx_slip = vx.max(self.min_slip_speed);
        let alpha_f = (vy + self.lf * r).atan2(vx_slip) - delta;
        let alpha_r = (vy - self.lr * r).atan2(vx_slip);

        let fz_f = m * GRAVITY * self.lr / l;
        let fz_r = m * GRAVITY * self.lf / l;
        let fyf = Self::lateral_force(self.cornering_front, self.friction * fz_f, alpha_f);
        let fyr = Self::lateral_force(self.cornering_rear, self.friction * fz_r, alpha_r);

        let fade = (vx / self.resist_fade_speed).tanh();
        let traction = if u.engine >= 0.0 {
            u.engine * self.max_drive_force
        } else {
            u.engine * self.max_brake_force * fade
        };
        let resistance = self.drag * vx * vx.abs() + self.rolling * m * GRAVITY * fade;

        let (sd, cd) = delta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        [
            vx * cp - vy * sp,
            vx * sp + vy * cp,
            r,
            (traction - resistance - fyf * sd) / m + vy * r,
            (fyr + fyf * cd) / m - vx * r,
            (self.lf * fyf * cd - self.lr * fyr) / self.yaw_inertia,
        ]
    }

    fn rk4(&self, s: &[f64; STATE_DIM], u: &Control, h: f64) -> [f64; STATE_DIM] {
        let axpy = |a: &[f64; STATE_DIM], k: &[f64; STATE_DIM], c: f64| {
            let mut out = *a;
            for i in 0..STATE_DIM {
                out[i] += c * k[i];
            }
            out
        };
        let k1 = self.derivative(s, u);
        let k2 = self.derivative(&axpy(s, &k1, 0.5 * h), u);
        let k3 = self.derivative(&axpy(s, &k2, 0.5 * h), u);
        let k4 = self.derivative(&axpy(s, &k3, h), u);
        let mut out = *s;
        for i in 0..STATE_DIM {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

/// Advances the plant by `dt` seconds under a constant control.
pub fn step(params: &VehicleParams, state: &VehicleState, u: &Control, dt: f64) -> Result<VehicleState> {
    step_with_substep(params, state, u, dt, MAX_SUBSTEP)
}

/// As [`step`], with an explicit upper bound on the RK4 substep.
pub fn step_with_substep(
    params: &VehicleParams,
    state: &VehicleState,
    u: &Control,
    dt: f64,
    max_substep: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() || !(max_substep > 0.0) {
        return Err(DdkError::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(DdkError::NumericDomain(format!("state {:?}", state)));
    }
    u.validate()?;

    let n = (dt / max_substep - 1e-9).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = state.to_array();
    for _ in 0..n {
        s = params.rk4(&s, u, h);
    }
    let next = VehicleState::from_array(s);
    if !next.is_finite() {
        return Err(DdkError::NumericDomain(format!("integrated state {:?}", next)));
    }
    Ok(next)
}

/// Applies `controls` in sequence; element `k` of the result is the state
/// after `k + 1` steps.
pub fn rollout(
    params: &VehicleParams,
    state0: &VehicleState,
    controls: &[Control],
    dt: f64,
) -> Result<Vec<VehicleState>> {
    if controls.is_empty() {
        return Err(DdkError::InvalidInput("rollout needs at least one control".into()));
    }
    let mut out = Vec::with_capacity(controls.len());
    let mut s = *state0;
    for (index, u) in controls.iter().enumerate() {
        s = step(params, &s, u, dt).map_err(|e| DdkError::RolloutStep {
            index,
            source: Box::new(e),
        })?;
        out.push(s);
    }
    Ok(out)
}
