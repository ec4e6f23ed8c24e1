//! Controller settings.

use nalgebra::DMatrix;

use crate::error::{DdkError, Result};
use crate::sim::vehicle::{CONTROL_DIM, STATE_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `N_p`.
    pub np: usize,
    /// Control horizon `N_c ≤ N_p`.
    pub nc: usize,
    /// State weight (`m x m`, normalized units).
    pub q: DMatrix<f64>,
    /// Increment weight (`n x n`, normalized units).
    pub r: DMatrix<f64>,
    /// Slack penalty `ρ`.
    pub rho: f64,
    pub u_min: [f64; CONTROL_DIM],
    pub u_max: [f64; CONTROL_DIM],
    pub du_min: [f64; CONTROL_DIM],
    pub du_max: [f64; CONTROL_DIM],
    pub eps_min: f64,
    pub eps_max: f64,
    /// Sample time in seconds.
    pub ts: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            np: 30,
            nc: 30,
            q: DMatrix::identity(STATE_DIM, STATE_DIM) * 1000.0,
            r: DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * 5.0,
            rho: 10.0,
            u_min: [-1.0; CONTROL_DIM],
            u_max: [1.0; CONTROL_DIM],
            du_min: [-0.5; CONTROL_DIM],
            du_max: [0.5; CONTROL_DIM],
            eps_min: 0.0,
            eps_max: 100.0,
            ts: 0.01,
        }
    }
}

impl MpcConfig {
    pub fn with_horizons(np: usize, nc: usize) -> Self {
        MpcConfig {
            np,
            nc,
            ..MpcConfig::default()
        }
    }

    /// Hash of every setting, for report provenance.
    pub fn hash(&self) -> String {
        let text = format!(
            "np={} nc={} q={:?} r={:?} rho={} u=[{:?},{:?}] du=[{:?},{:?}] eps=[{},{}] ts={}",
            self.np,
            self.nc,
            self.q.as_slice(),
            self.r.as_slice(),
            self.rho,
            self.u_min,
            self.u_max,
            self.du_min,
            self.du_max,
            self.eps_min,
            self.eps_max,
            self.ts
        );
        crate::util::sha256_hex(text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc == 0 || self.nc > self.np {
            return Err(DdkError::InvalidInput(format!(
                "need 1 ≤ N_c ≤ N_p, got N_c = {}, N_p = {}",
                self.nc, self.np
            )));
        }
        for (name, w, dim) in [("Q", &self.q, STATE_DIM), ("R", &self.r, CONTROL_DIM)] {
            if w.shape() != (dim, dim) {
                return Err(DdkError::InvalidInput(format!("{name} must be {dim}x{dim}")));
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(DdkError::InvalidInput(format!("{name} must be symmetric")));
            }
        }
        // R keeps the condensed Hessian positive definite; Q may be
        // semidefinite (zero weight on a channel).
        if self.r.clone().cholesky().is_none() {
            return Err(DdkError::InvalidInput("R must be positive definite".into()));
        }
        let min_eig = self.q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * self.q.amax().max(1.0) {
            return Err(DdkError::InvalidInput("Q must be positive semidefinite".into()));
        }
        if !(self.rho > 0.0) {
            return Err(DdkError::InvalidInput("slack penalty must be positive".into()));
        }
        for i in 0..CONTROL_DIM {
            if self.u_min[i] > self.u_max[i] || self.du_min[i] > self.du_max[i] {
                return Err(DdkError::InvalidInput("control bounds out of order".into()));
            }
        }
        if self.eps_min > self.eps_max || self.eps_min < 0.0 {
            return Err(DdkError::InvalidInput(
                "slack bounds must satisfy 0 ≤ ε_min ≤ ε_max".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = MpcConfig::default();
        c.validate().unwrap();
        assert_eq!(c.q[(0, 0)], 1000.0);
        assert_eq!(c.r[(1, 1)], 5.0);
        assert_eq!((c.rho, c.eps_max, c.ts), (10.0, 100.0, 0.01));
        assert!(MpcConfig::with_horizons(5, 6).validate().is_err());
        let mut bad = MpcConfig::default();
        bad.r[(0, 0)] = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = MpcConfig::default();
        bad.q[(2, 2)] = -1.0;
        assert!(bad.validate().is_err());
        let zero_q = MpcConfig {
            q: DMatrix::zeros(6, 6),
            ..MpcConfig::default()
        };
        zero_q.validate().unwrap();
    }
}
