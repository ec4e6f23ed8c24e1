//! Smooth, bounded excitation signals standing in for a human driver.
//!
//! Each channel is a sum of sinusoids plus an Ornstein-Uhlenbeck (low-pass
//! filtered random walk) component. The raw signals are shaped the way a
//! driver would: steering amplitude shrinks with speed so the yaw rate and
//! lateral acceleration stay in a realistic envelope, and the engine channel
//! is biased back toward a speed band. The shaping needs the speed the plant
//! would reach, so the generator runs the default plant alongside.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::vehicle::{step, Control, VehicleParams, VehicleState, SWA_LIMIT};
use crate::util::rng_from_seed;

#[derive(Debug, Clone)]
pub struct ExcitationConfig {
    pub n_sines: usize,
    pub steer_band_hz: (f64, f64),
    pub engine_band_hz: (f64, f64),
    /// Correlation time of the random-walk component (s).
    pub ou_tau: f64,
    /// Speed band the engine guard steers toward (m/s).
    pub speed_band: (f64, f64),
    /// Engine command per m/s outside the speed band.
    pub guard_gain: f64,
    pub engine_bias: f64,
    pub engine_amplitude: f64,
    /// Yaw rate the steering shaping aims not to exceed (rad/s).
    pub max_yaw_rate: f64,
    /// Lateral acceleration the steering shaping aims not to exceed (m/s^2).
    pub max_lateral_acc: f64,
    /// Period band of the straight/turn gate (s).
    pub gate_band_s: (f64, f64),
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            n_sines: 5,
            steer_band_hz: (0.03, 0.4),
            engine_band_hz: (0.02, 0.2),
            ou_tau: 2.0,
            speed_band: (6.0, 21.0),
            guard_gain: 0.25,
            engine_bias: 0.2,
            engine_amplitude: 0.6,
            max_yaw_rate: 0.9,
            max_lateral_acc: 6.0,
            gate_band_s: (12.0, 30.0),
        }
    }
}

struct SineBank {
    terms: Vec<(f64, f64, f64)>,
    norm: f64,
}

impl SineBank {
    fn new(rng: &mut ChaCha8Rng, n: usize, band: (f64, f64)) -> Self {
        let (lo, hi) = (band.0.ln(), band.1.ln());
        let terms: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let f = rng.gen_range(lo..hi).exp();
                let amp = rng.gen_range(0.3..1.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                (amp, 2.0 * PI * f, phase)
            })
            .collect();
        let norm = terms.iter().map(|t| t.0 * t.0).sum::<f64>().sqrt().max(1e-12);
        SineBank { terms, norm }
    }

    /// Unit-RMS-scale value at time `t`.
    fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, w, ph)| a * (w * t + ph).sin()).sum::<f64>() / self.norm
    }
}

/// Ornstein-Uhlenbeck process with unit stationary standard deviation.
struct Ou {
    value: f64,
    decay: f64,
    kick: f64,
}

impl Ou {
    fn new(tau: f64, dt: f64) -> Self {
        let decay = (-dt / tau).exp();
        Ou {
            value: 0.0,
            decay,
            kick: (1.0 - decay * decay).sqrt(),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller keeps this independent of a distributions crate.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        self.value = self.decay * self.value + self.kick * z;
        self.value
    }
}

#[derive(Debug, Clone)]
pub struct Exciter {
    pub params: VehicleParams,
    pub dt: f64,
    pub config: ExcitationConfig,
}

impl Default for Exciter {
    fn default() -> Self {
        Exciter {
            params: VehicleParams::default(),
            dt: 0.01,
            config: ExcitationConfig::default(),
        }
    }
}

impl Exciter {
    /// Steering-wheel amplitude a driver would allow at speed `vx`.
    pub fn steering_envelope(&self, vx: f64) -> f64 {
        let k = self.params.steering_ratio * self.params.wheelbase();
        let v = vx.max(0.1);
        SWA_LIMIT
            .min(k * self.config.max_yaw_rate / v)
            .min(k * self.config.max_lateral_acc / (v * v))
    }

    pub fn generate(&self, initial: &VehicleState, duration_steps: usize, seed: u64) -> Vec<Control> {
        let cfg = &self.config;
        let mut rng = rng_from_seed(seed);
        let steer_sines = SineBank::new(&mut rng, cfg.n_sines, cfg.steer_band_hz);
        let engine_sines = SineBank::new(&mut rng, cfg.n_sines, cfg.engine_band_hz);
        let gate_period = rng.gen_range(cfg.gate_band_s.0..cfg.gate_band_s.1);
        let gate_phase = rng.gen_range(0.0..2.0 * PI);
        let mut steer_ou = Ou::new(cfg.ou_tau, self.dt);
        let mut engine_ou = Ou::new(cfg.ou_tau, self.dt);

        let mut state = *initial;
        let mut out = Vec::with_capacity(duration_steps);
        for k in 0..duration_steps {
            let t = k as f64 * self.dt;
            let vx = state.vx;

            // Gate in [0, 1]: long stretches near 0 give straights.
            let g = 0.5 + 0.5 * (2.0 * PI * t / gate_period + gate_phase).sin();
            let gate = g * g * (3.0 - 2.0 * g);
            let raw_steer = (0.6 * steer_sines.eval(t) + 0.5 * steer_ou.next(&mut rng)).clamp(-1.0, 1.0);
            let swa = gate * raw_steer * self.steering_envelope(vx);

            let (lo, hi) = cfg.speed_band;
            let guard = cfg.guard_gain * ((lo - vx).max(0.0) - (vx - hi).max(0.0));
            let raw_engine = cfg.engine_amplitude * (0.7 * engine_sines.eval(t) + 0.5 * engine_ou.next(&mut rng));
            let engine = cfg.engine_bias + raw_engine + guard;

            let u = Control::new(swa, engine).clamped();
            if let Ok(next) = step(&self.params, &state, &u, self.dt) {
                state = next;
            }
            out.push(u);
        }
        out
    }
}

/// Excitation sequence for the default plant starting from rest.
pub fn excite(duration_steps: usize, seed: u64) -> Vec<Control> {
    Exciter::default().generate(&VehicleState::at_rest(), duration_steps, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::vehicle::rollout;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(excite(500, 7), excite(500, 7));
        assert_ne!(excite(500, 7), excite(500, 8));
    }

    #[test]
    fn within_control_bounds() {
        for seed in 0..5 {
            for u in excite(2000, seed) {
                assert!(u.swa.abs() <= SWA_LIMIT);
                assert!(u.engine.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn envelope_seed_zero() {
        let controls = excite(4000, 0);
        let states = rollout(&VehicleParams::default(), &VehicleState::at_rest(), &controls, 0.01).unwrap();
        for s in &states {
            assert!((0.0..=27.0).contains(&s.vx), "vx {}", s.vx);
            assert!(s.vy.abs() <= 1.7, "vy {}", s.vy);
            assert!(s.r.abs() <= 1.2, "r {}", s.r);
        }
    }
}
