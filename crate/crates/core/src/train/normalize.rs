//! Per-channel affine normalization.
//!
//! Velocities and poses map to `[-2, 2]`, controls to `[-1, 1]`. The engine
//! channel is piecewise: throttle opening `[0, 0.2]` maps to `[0, 1]` and
//! brake pressure `[0, 10]` MPa (recorded negated) maps to `[-1, 0]`. Inputs
//! outside the fitted ranges pass through the same affine maps unclamped.

use serde::{Deserialize, Serialize};

use crate::sim::vehicle::{BRAKE_PRESSURE_MAX, SWA_LIMIT, THROTTLE_MAX};

/// Maps `[lo, hi]` onto `[-target, target]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRange {
    pub lo: f64,
    pub hi: f64,
    pub target: f64,
}

impl AffineRange {
    pub fn new(lo: f64, hi: f64, target: f64) -> Self {
        assert!(hi > lo && target > 0.0, "degenerate range [{lo}, {hi}] -> ±{target}");
        AffineRange { lo, hi, target }
    }

    pub fn symmetric(bound: f64, target: f64) -> Self {
        AffineRange::new(-bound, bound, target)
    }

    pub fn apply(&self, v: f64) -> f64 {
        (2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0) * self.target
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.lo + (z / self.target + 1.0) * 0.5 * (self.hi - self.lo)
    }

    /// Multiplier from physical to normalized units.
    pub fn gain(&self) -> f64 {
        2.0 * self.target / (self.hi - self.lo)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    /// `x, y, psi` in the local frame.
    pub pose: [AffineRange; 3],
    /// `vx, vy, r`.
    pub velocity: [AffineRange; 3],
    pub swa: AffineRange,
    pub throttle_max: f64,
    pub brake_max: f64,
}

impl Default for NormalizationMeta {
    fn default() -> Self {
        NormalizationMeta {
            pose: [
                AffineRange::symmetric(20.0, 2.0),
                AffineRange::symmetric(20.0, 2.0),
                AffineRange::symmetric(std::f64::consts::PI, 2.0),
            ],
            velocity: [
                AffineRange::new(0.0, 27.0, 2.0),
                AffineRange::new(-1.4, 1.7, 2.0),
                AffineRange::new(-1.1, 1.1, 2.0),
            ],
            swa: AffineRange::symmetric(SWA_LIMIT, 1.0),
            throttle_max: THROTTLE_MAX,
            brake_max: BRAKE_PRESSURE_MAX,
        }
    }
}

impl NormalizationMeta {
    pub fn with_pose_bounds(mut self, x: f64, y: f64, psi: f64) -> Self {
        self.pose = [
            AffineRange::symmetric(x, 2.0),
            AffineRange::symmetric(y, 2.0),
            AffineRange::symmetric(psi, 2.0),
        ];
        self
    }

    fn state_channel(&self, i: usize) -> &AffineRange {
        if i < 3 {
            &self.pose[i]
        } else {
            &self.velocity[i - 3]
        }
    }

    pub fn normalize_state(&self, s: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| self.state_channel(i).apply(s[i]))
    }

    pub fn denormalize_state(&self, z: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| self.state_channel(i).invert(z[i]))
    }

    /// Normalized state gain per channel (physical -> normalized slope).
    pub fn state_gains(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.state_channel(i).gain())
    }

    pub fn normalize_engine(&self, physical: f64) -> f64 {
        if physical >= 0.0 {
            physical / self.throttle_max
        } else {
            physical / self.brake_max
        }
    }

    pub fn denormalize_engine(&self, z: f64) -> f64 {
        if z >= 0.0 {
            z * self.throttle_max
        } else {
            z * self.brake_max
        }
    }

    /// `[swa, engine_physical]` -> normalized.
    pub fn normalize_control(&self, u: &[f64; 2]) -> [f64; 2] {
        [self.swa.apply(u[0]), self.normalize_engine(u[1])]
    }

    pub fn denormalize_control(&self, z: &[f64; 2]) -> [f64; 2] {
        [self.swa.invert(z[0]), self.denormalize_engine(z[1])]
    }

    /// Full raw row `[x, y, psi, vx, vy, r, swa, engine]`.
    pub fn normalize_row(&self, row: &[f64; 8]) -> [f64; 8] {
        let s = self.normalize_state(&[row[0], row[1], row[2], row[3], row[4], row[5]]);
        let u = self.normalize_control(&[row[6], row[7]]);
        [s[0], s[1], s[2], s[3], s[4], s[5], u[0], u[1]]
    }

    pub fn denormalize_row(&self, z: &[f64; 8]) -> [f64; 8] {
        let s = self.denormalize_state(&[z[0], z[1], z[2], z[3], z[4], z[5]]);
        let u = self.denormalize_control(&[z[6], z[7]]);
        [s[0], s[1], s[2], s[3], s[4], s[5], u[0], u[1]]
    }

    /// Count of raw rows whose channels fall outside the fitted ranges,
    /// per channel `[x, y, psi, vx, vy, r, swa, engine]`.
    pub fn out_of_range_counts<'a>(&self, rows: impl Iterator<Item = &'a [f64; 8]>) -> [usize; 8] {
        let mut counts = [0usize; 8];
        for row in rows {
            for i in 0..6 {
                if !self.state_channel(i).contains(row[i]) {
                    counts[i] += 1;
                }
            }
            if !self.swa.contains(row[6]) {
                counts[6] += 1;
            }
            if row[7] > self.throttle_max || row[7] < -self.brake_max {
                counts[7] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_endpoints_are_exact() {
        let n = NormalizationMeta::default();
        let row = |vx: f64, swa: f64, eng: f64| n.normalize_row(&[0.0, 0.0, 0.0, vx, 0.0, 0.0, swa, eng]);
        assert_eq!(row(27.0, 0.0, 0.0)[3], 2.0);
        assert_eq!(row(0.0, 0.0, 0.0)[3], -2.0);
        assert_eq!(row(13.5, 0.0, 0.0)[3], 0.0);
        assert_eq!(row(0.0, 7.85, 0.0)[6], 1.0);
        assert_eq!(row(0.0, 0.0, -10.0)[7], -1.0);
        assert_eq!(row(0.0, 0.0, 0.2)[7], 1.0);
    }

    #[test]
    fn round_trip() {
        let n = NormalizationMeta::default().with_pose_bounds(14.0, 5.0, 0.9);
        let raw = [3.2, -1.1, 0.4, 17.0, -0.3, 0.25, -2.5, -4.2];
        let back = n.denormalize_row(&n.normalize_row(&raw));
        for (a, b) in raw.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_passes_through() {
        let n = NormalizationMeta::default();
        let z = n.normalize_state(&[0.0, 0.0, 0.0, 30.0, 0.0, 0.0]);
        assert!(z[3] > 2.0);
        let rows = [[0.0, 0.0, 0.0, 30.0, 0.0, 0.0, 0.0, 0.3]];
        let c = n.out_of_range_counts(rows.iter());
        assert_eq!(c[3], 1);
        assert_eq!(c[7], 1);
        assert_eq!(c[0], 0);
    }
}
