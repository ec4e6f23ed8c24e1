//! Incremental augmented model and horizon prediction matrices.
//!
//! `Φ_{k+1} = 𝔸 Φ_k + 𝔹 Δu_k` with `Φ_k = [φ_k; u_{k−1}]`,
//! `𝔸 = [[A, B], [0, I]]`, `𝔹 = [B; I]`, and outputs `y = ℂ Φ` where `ℂ`
//! selects the first `m` latent entries.

use nalgebra::{DMatrix, DVector};

use crate::error::{DdkError, Result};
use crate::koopman::model::LatentModel;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl AugmentedModel {
    /// From latent `A` (`K x K`), `B` (`K x n`) and the output count `m`.
    pub fn from_parts(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize) -> Self {
        let (k, n) = b.shape();
        let mut aa = DMatrix::zeros(k + n, k + n);
        aa.view_mut((0, 0), (k, k)).copy_from(a);
        aa.view_mut((0, k), (k, n)).copy_from(b);
        aa.view_mut((k, k), (n, n)).fill_with_identity();
        let mut bb = DMatrix::zeros(k + n, n);
        bb.view_mut((0, 0), (k, n)).copy_from(b);
        bb.view_mut((k, 0), (n, n)).fill_with_identity();
        let mut c = DMatrix::zeros(m, k + n);
        c.view_mut((0, 0), (m, m)).fill_with_identity();
        AugmentedModel { a: aa, b: bb, c }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, phi: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        &self.a * phi + &self.b * du
    }
}

/// Augmented model of `model` and the augmented state `[φ; u_prev]`.
pub fn augment(
    model: &LatentModel,
    phi: &DVector<f64>,
    u_prev: &DVector<f64>,
) -> Result<(AugmentedModel, DVector<f64>)> {
    let (k, n) = (model.latent_dim(), model.control_dim());
    if phi.len() != k || u_prev.len() != n {
        return Err(DdkError::Dimension {
            context: "augmented state",
            expected: k + n,
            actual: phi.len() + u_prev.len(),
        });
    }
    let am = AugmentedModel::from_parts(&model.a(), &model.b, model.state_dim());
    let mut big = DVector::zeros(k + n);
    big.rows_mut(0, k).copy_from(phi);
    big.rows_mut(k, n).copy_from(u_prev);
    Ok((am, big))
}

/// `𝒴 = 𝒜 Φ + ℬ ΔU` over `N_p` outputs and `N_c` free increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub np: usize,
    pub nc: usize,
    /// `m N_p x (K + n)`.
    pub a: DMatrix<f64>,
    /// `m N_p x n N_c`, block-lower-triangular.
    pub b: DMatrix<f64>,
}

impl PredictionMatrices {
    pub fn predict(&self, phi: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        &self.a * phi + &self.b * du
    }
}

pub fn build_prediction(am: &AugmentedModel, np: usize, nc: usize) -> Result<PredictionMatrices> {
    if nc == 0 || nc > np {
        return Err(DdkError::InvalidInput(format!("need 1 ≤ N_c ≤ N_p, got {nc}, {np}")));
    }
    let (m, s, n) = (am.output_dim(), am.state_dim(), am.control_dim());
    // ℂ𝔸^i for i = 0..N_p.
    let mut powers = Vec::with_capacity(np + 1);
    powers.push(am.c.clone());
    for i in 0..np {
        let next = &powers[i] * &am.a;
        powers.push(next);
    }
    let cab: Vec<DMatrix<f64>> = powers[..np].iter().map(|p| p * &am.b).collect();
    let mut a = DMatrix::zeros(m * np, s);
    let mut b = DMatrix::zeros(m * np, n * nc);
    for i in 1..=np {
        a.view_mut(((i - 1) * m, 0), (m, s)).copy_from(&powers[i]);
        for j in 1..=nc.min(i) {
            b.view_mut(((i - 1) * m, (j - 1) * n), (m, n)).copy_from(&cab[i - j]);
        }
    }
    Ok(PredictionMatrices { np, nc, a, b })
}
