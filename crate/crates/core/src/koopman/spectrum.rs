//! Eigenvalue parameterisation of the latent transition matrix.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DdkError, Result};
use crate::nn::tape::block_diag;

/// Number of conjugate pairs and real eigenvalues for a latent width `k`:
/// `floor(k / 2)` pairs and `k mod 2` reals.
pub fn allocate_eigenvalues(k: usize) -> Result<(usize, usize)> {
    if k == 0 {
        return Err(DdkError::InvalidInput("latent width must be at least 1".into()));
    }
    Ok((k / 2, k % 2))
}

/// Conjugate pairs `C_j ± i P_j` followed by real eigenvalues `R_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    /// `(C_j, P_j)`.
    pub pairs: Vec<(f64, f64)>,
    pub reals: Vec<f64>,
}

impl EigenSpectrum {
    pub fn new(pairs: Vec<(f64, f64)>, reals: Vec<f64>) -> Self {
        EigenSpectrum { pairs, reals }
    }

    pub fn dim(&self) -> usize {
        2 * self.pairs.len() + self.reals.len()
    }

    /// Random near-unit-circle spectrum with the allocation for `k`.
    pub fn random<R: Rng>(k: usize, rng: &mut R) -> Result<Self> {
        let (np, nr) = allocate_eigenvalues(k)?;
        let pairs = (0..np)
            .map(|_| (rng.gen_range(0.85..0.99), rng.gen_range(-0.1..0.1)))
            .collect();
        let reals = (0..nr).map(|_| rng.gen_range(0.9..0.99)).collect();
        Ok(EigenSpectrum { pairs, reals })
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// Block-diagonal `K x K` matrix: `[[C, P], [-P, C]]` per pair, then the
    /// real eigenvalues on the diagonal.
    pub fn build_a(&self) -> DMatrix<f64> {
        block_diag(&self.real_parts(), &self.imag_parts(), &self.reals)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.pairs
            .iter()
            .map(|(c, p)| c.hypot(*p))
            .chain(self.reals.iter().map(|r| r.abs()))
            .fold(0.0, f64::max)
    }

    /// Eigenvalues as `(re, im)`, each conjugate pair listed twice.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.dim());
        for &(c, p) in &self.pairs {
            out.push((c, p));
            out.push((c, -p));
        }
        out.extend(self.reals.iter().map(|&r| (r, 0.0)));
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.pairs.iter().map(|(c, p)| c * c + p * p).sum::<f64>() + self.reals.iter().map(|r| r * r).sum::<f64>()
    }
}
