//! The learned latent linear model.
//!
//! A latent state is `[s; φ_e(s)]` (concatenating mode) or `φ_e(s)` alone
//! (plain mode). It evolves as `φ' = A φ + B u` with `A` rebuilt from the
//! eigenvalue spectrum, and maps back to the physical state through the
//! decoder.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spectrum::EigenSpectrum;
use crate::error::{DdkError, Result};
use crate::nn::mlp::{Activation, Mlp, MlpVars};
use crate::nn::tape::{Gradients, Tape, Var};
use crate::train::normalize::NormalizationMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftMode {
    /// Physical state concatenated ahead of the encoder features.
    Ddk,
    /// Encoder features only.
    Wddk,
}

impl LiftMode {
    pub fn name(self) -> &'static str {
        match self {
            LiftMode::Ddk => "ddk",
            LiftMode::Wddk => "wddk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub state_dim: usize,
    pub control_dim: usize,
    pub latent_dim: usize,
    pub frames: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub mode: LiftMode,
}

impl ModelShape {
    /// Encoder `[m·c, 64, 128, K, K]`, decoder `[K, 128, 64, 64, m]`.
    pub fn standard(state_dim: usize, control_dim: usize, latent_dim: usize, frames: usize, mode: LiftMode) -> Self {
        ModelShape {
            state_dim,
            control_dim,
            latent_dim,
            frames,
            encoder_hidden: vec![64, 128],
            decoder_hidden: vec![128, 64, 64],
            mode,
        }
    }

    /// Width of the encoder contribution to the latent state.
    pub fn feature_dim(&self) -> usize {
        match self.mode {
            LiftMode::Ddk => self.latent_dim - self.state_dim,
            LiftMode::Wddk => self.latent_dim,
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let k = self.latent_dim;
        let mut w = vec![self.state_dim * self.frames];
        w.extend(&self.encoder_hidden);
        w.extend([k, k]);
        if self.mode == LiftMode::Ddk {
            // Projection to the K - m feature tail.
            w.push(self.feature_dim());
        }
        w
    }

    pub fn encoder_activations(&self) -> Vec<Activation> {
        let mut a = vec![Activation::Tanh; self.encoder_hidden.len() + 1];
        a.push(Activation::Identity);
        if self.mode == LiftMode::Ddk {
            a.push(Activation::Identity);
        }
        a
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(&self.decoder_hidden);
        w.push(self.state_dim);
        w
    }

    pub fn decoder_activations(&self) -> Vec<Activation> {
        let mut a = vec![Activation::Tanh; self.decoder_hidden.len()];
        a.push(Activation::Identity);
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.control_dim == 0 || self.frames == 0 || self.latent_dim == 0 {
            return Err(DdkError::InvalidInput("model dimensions must be positive".into()));
        }
        if self.mode == LiftMode::Ddk && self.latent_dim < self.state_dim {
            return Err(DdkError::InvalidInput(format!(
                "latent width {} smaller than state width {}",
                self.latent_dim, self.state_dim
            )));
        }
        Ok(())
    }
}

/// Leading block of the latent model acting on the physical state.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `m`, or `m + 1` when a conjugate block straddles index `m`.
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub shape: ModelShape,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub spectrum: EigenSpectrum,
    /// `K x n` input matrix.
    pub b: DMatrix<f64>,
    pub norm: NormalizationMeta,
}

/// Tape handles for every trainable tensor of a [`LatentModel`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    pub c: Var,
    pub p: Var,
    pub reals: Var,
    pub b: Var,
}

impl LatentModel {
    pub fn random<R: Rng>(shape: ModelShape, norm: NormalizationMeta, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let encoder = Mlp::random(&shape.encoder_widths(), &shape.encoder_activations(), rng);
        let decoder = Mlp::random(&shape.decoder_widths(), &shape.decoder_activations(), rng);
        let spectrum = EigenSpectrum::random(shape.latent_dim, rng)?;
        let b = DMatrix::from_fn(shape.latent_dim, shape.control_dim, |_, _| rng.gen_range(-0.01..0.01));
        Ok(LatentModel {
            shape,
            encoder,
            decoder,
            spectrum,
            b,
            norm,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.shape.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.shape.control_dim
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.spectrum.build_a()
    }

    /// Lifts a batch of normalized windows (`m·c x N`, oldest frame first)
    /// to latent states (`K x N`).
    pub fn lift_batch(&self, windows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.state_dim();
        let width = m * self.shape.frames;
        if windows.nrows() != width {
            return Err(DdkError::Dimension {
                context: "lift input",
                expected: width,
                actual: windows.nrows(),
            });
        }
        let features = self.encoder.forward(windows)?;
        match self.shape.mode {
            LiftMode::Wddk => Ok(features),
            LiftMode::Ddk => {
                let n = windows.ncols();
                let mut out = DMatrix::zeros(self.latent_dim(), n);
                out.rows_mut(0, m).copy_from(&windows.rows(width - m, m));
                out.rows_mut(m, features.nrows()).copy_from(&features);
                Ok(out)
            }
        }
    }

    pub fn lift(&self, window: &[f64]) -> Result<DVector<f64>> {
        let w = DMatrix::from_column_slice(window.len(), 1, window);
        Ok(DVector::from_column_slice(self.lift_batch(&w)?.as_slice()))
    }

    /// One latent step `A φ + B u`.
    pub fn latent_step(&self, phi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_latent(phi)?;
        self.check_control(u)?;
        Ok(self.a() * phi + &self.b * u)
    }

    /// `φ_1 .. φ_p` under `controls[0..p)`.
    pub fn latent_rollout(&self, phi0: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        if controls.is_empty() {
            return Err(DdkError::InvalidInput("rollout needs at least one control".into()));
        }
        self.check_latent(phi0)?;
        let a = self.a();
        let mut out = Vec::with_capacity(controls.len());
        let mut phi = phi0.clone();
        for u in controls {
            self.check_control(u)?;
            phi = &a * &phi + &self.b * u;
            out.push(phi.clone());
        }
        Ok(out)
    }

    pub fn decode_batch(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if latents.nrows() != self.latent_dim() {
            return Err(DdkError::Dimension {
                context: "decode input",
                expected: self.latent_dim(),
                actual: latents.nrows(),
            });
        }
        self.decoder.forward(latents)
    }

    pub fn decode(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        self.decoder.forward_vec(phi).map_err(|e| match e {
            DdkError::Dimension { expected, actual, .. } => DdkError::Dimension {
                context: "decode input",
                expected,
                actual,
            },
            other => other,
        })
    }

    /// Leading principal blocks `A[0..d, 0..d]`, `B[0..d, :]`, where `d = m`
    /// unless a conjugate 2x2 block straddles index `m`, in which case the
    /// whole block is kept and `d = m + 1`.
    pub fn extract_subsystem(&self) -> Result<Subsystem> {
        if self.shape.mode != LiftMode::Ddk {
            return Err(DdkError::UnsupportedMode("wddk"));
        }
        let m = self.state_dim();
        let straddles = m % 2 == 1 && m < 2 * self.spectrum.pairs.len();
        let dim = if straddles { m + 1 } else { m };
        let a = self.a();
        Ok(Subsystem {
            a: a.view((0, 0), (dim, dim)).into_owned(),
            b: self.b.rows(0, dim).into_owned(),
            dim,
        })
    }

    fn check_latent(&self, phi: &DVector<f64>) -> Result<()> {
        if phi.len() != self.latent_dim() {
            return Err(DdkError::Dimension {
                context: "latent state",
                expected: self.latent_dim(),
                actual: phi.len(),
            });
        }
        Ok(())
    }

    fn check_control(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.control_dim() {
            return Err(DdkError::Dimension {
                context: "latent control",
                expected: self.control_dim(),
                actual: u.len(),
            });
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params() + self.latent_dim() + self.b.len()
    }

    /// All trainable values: encoder, decoder, `C`, `P`, `R`, `B` (row-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.encoder.flatten_into(&mut out);
        self.decoder.flatten_into(&mut out);
        out.extend(self.spectrum.pairs.iter().map(|p| p.0));
        out.extend(self.spectrum.pairs.iter().map(|p| p.1));
        out.extend(&self.spectrum.reals);
        out.extend(self.b.transpose().iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(DdkError::Dimension {
                context: "flat parameter vector",
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let mut off = self.encoder.unflatten_from(flat);
        off += self.decoder.unflatten_from(&flat[off..]);
        let np = self.spectrum.pairs.len();
        for j in 0..np {
            self.spectrum.pairs[j] = (flat[off + j], flat[off + np + j]);
        }
        off += 2 * np;
        let nr = self.spectrum.reals.len();
        self.spectrum.reals.copy_from_slice(&flat[off..off + nr]);
        off += nr;
        let (r, c) = self.b.shape();
        self.b = DMatrix::from_row_slice(r, c, &flat[off..off + r * c]);
        Ok(())
    }

    /// Parameter `index` in [`LatentModel::flatten`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        let ne = self.encoder.n_params();
        if index < ne {
            return self.encoder.param_mut(index);
        }
        index -= ne;
        let nd = self.decoder.n_params();
        if index < nd {
            return self.decoder.param_mut(index);
        }
        index -= nd;
        let np = self.spectrum.pairs.len();
        if index < np {
            return Some(&mut self.spectrum.pairs[index].0);
        }
        index -= np;
        if index < np {
            return Some(&mut self.spectrum.pairs[index].1);
        }
        index -= np;
        let nr = self.spectrum.reals.len();
        if index < nr {
            return Some(&mut self.spectrum.reals[index]);
        }
        index -= nr;
        let c = self.b.ncols();
        if index < self.b.len() {
            return Some(&mut self.b[(index / c, index % c)]);
        }
        None
    }

    /// `‖θ_e‖² + ‖θ_d‖² + ‖Λ‖² + ‖B‖²`.
    pub fn squared_norm(&self) -> f64 {
        self.encoder.squared_norm() + self.decoder.squared_norm() + self.spectrum.squared_norm() + self.b.norm_squared()
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let col = |v: Vec<f64>| DMatrix::from_column_slice(v.len(), 1, &v);
        ModelVars {
            encoder: self.encoder.register(tape),
            decoder: self.decoder.register(tape),
            c: tape.param(col(self.spectrum.real_parts())),
            p: tape.param(col(self.spectrum.imag_parts())),
            reals: tape.param(col(self.spectrum.reals.clone())),
            b: tape.param(self.b.clone()),
        }
    }

    /// Gradient in [`LatentModel::flatten`] order.
    pub fn flatten_grads(&self, vars: &ModelVars, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        Mlp::flatten_grads(&vars.encoder, grads, &mut out);
        Mlp::flatten_grads(&vars.decoder, grads, &mut out);
        out.extend(grads.wrt(vars.c).iter());
        out.extend(grads.wrt(vars.p).iter());
        out.extend(grads.wrt(vars.reals).iter());
        out.extend(grads.wrt(vars.b).transpose().iter());
        out
    }

    /// Records the lift of `windows` (`m·c x N`, a tape node).
    pub fn lift_tape(&self, tape: &mut Tape, vars: &ModelVars, windows: Var) -> Var {
        let features = self.encoder.forward_tape(tape, &vars.encoder, windows);
        match self.shape.mode {
            LiftMode::Wddk => features,
            LiftMode::Ddk => {
                let m = self.state_dim();
                let width = m * self.shape.frames;
                let current = tape.rows(windows, width - m, m);
                tape.vcat(current, features)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Layer;
    use crate::util::rng_from_seed;

    fn tiny(mode: LiftMode, m: usize, k: usize) -> LatentModel {
        let mut shape = ModelShape::standard(m, 2, k, 1, mode);
        shape.encoder_hidden = vec![5];
        shape.decoder_hidden = vec![5];
        LatentModel::random(shape, NormalizationMeta::default(), &mut rng_from_seed(9)).unwrap()
    }

    fn constant_net(input: usize, bias: &[f64]) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weight: DMatrix::zeros(bias.len(), input),
            bias: DVector::from_column_slice(bias),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn default_layer_widths() {
        let s = ModelShape::standard(6, 2, 22, 1, LiftMode::Ddk);
        assert_eq!(s.encoder_widths(), vec![6, 64, 128, 22, 22, 16]);
        assert_eq!(s.decoder_widths(), vec![22, 128, 64, 64, 6]);
        let w = ModelShape::standard(6, 2, 22, 1, LiftMode::Wddk);
        assert_eq!(w.encoder_widths(), vec![6, 64, 128, 22, 22]);
    }

    #[test]
    fn zero_encoder_lift_is_state_then_bias() {
        let mut model = tiny(LiftMode::Ddk, 3, 6);
        model.encoder = constant_net(3, &[0.4, -0.5, 0.6]);
        let s = [0.1, 0.2, -0.3];
        let phi = model.lift(&s).unwrap();
        assert_eq!(phi.as_slice(), &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
    }

    #[test]
    fn lift_hand_evaluation() {
        let mut model = tiny(LiftMode::Ddk, 2, 3);
        let w = [[0.3, -0.7]];
        model.encoder = Mlp::from_layers(vec![Layer {
            weight: DMatrix::from_row_slice(1, 2, &w.concat()),
            bias: DVector::from_element(1, 0.05),
            activation: Activation::Tanh,
        }])
        .unwrap();
        let s = [0.1, 0.4];
        let phi = model.lift(&s).unwrap();
        let expected = (0.3 * 0.1 - 0.7 * 0.4 + 0.05f64).tanh();
        assert_eq!(&phi.as_slice()[..2], &s);
        assert!((phi[2] - expected).abs() < 1e-15);
    }

    #[test]
    fn lift_dimension_mismatch() {
        let model = tiny(LiftMode::Ddk, 3, 6);
        assert!(matches!(model.lift(&[0.0; 4]), Err(DdkError::Dimension { .. })));
    }

    #[test]
    fn identity_dynamics_hold_state() {
        let mut model = tiny(LiftMode::Ddk, 2, 4);
        model.spectrum = EigenSpectrum::new(vec![(1.0, 0.0); 2], vec![]);
        model.b = DMatrix::zeros(4, 2);
        let phi = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        let u = DVector::from_vec(vec![0.7, -0.4]);
        assert_eq!(model.latent_step(&phi, &u).unwrap(), phi);
        let traj = model.latent_rollout(&phi, &vec![u; 5]).unwrap();
        assert!(traj.iter().all(|p| *p == phi));
    }

    #[test]
    fn step_from_zero_gives_first_column_of_b() {
        let mut model = tiny(LiftMode::Ddk, 2, 4);
        model.b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let out = model
            .latent_step(&DVector::zeros(4), &DVector::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(out, model.b.column(0).into_owned());
    }

    #[test]
    fn step_matches_dot_products() {
        let model = tiny(LiftMode::Ddk, 2, 4);
        let a = model.a();
        let phi = DVector::from_vec(vec![0.3, -1.2, 0.8, 0.05]);
        let u = DVector::from_vec(vec![-0.6, 0.9]);
        let out = model.latent_step(&phi, &u).unwrap();
        for i in 0..4 {
            let mut e = 0.0;
            for j in 0..4 {
                e += a[(i, j)] * phi[j];
            }
            for j in 0..2 {
                e += model.b[(i, j)] * u[j];
            }
            assert!((out[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_constant_and_identity() {
        let mut model = tiny(LiftMode::Ddk, 2, 4);
        model.decoder = constant_net(4, &[0.25, -0.75]);
        let d = model.decode(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(d.as_slice(), &[0.25, -0.75]);

        let mut sel = DMatrix::zeros(2, 4);
        sel[(0, 0)] = 1.0;
        sel[(1, 1)] = 1.0;
        model.decoder = Mlp::from_layers(vec![Layer {
            weight: sel,
            bias: DVector::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let d = model.decode(&DVector::from_vec(vec![0.6, -0.1, 0.0, 0.0])).unwrap();
        assert_eq!(d.as_slice(), &[0.6, -0.1]);
        assert!(model.decode(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn subsystem_extraction() {
        let model = tiny(LiftMode::Ddk, 4, 4);
        let sub = model.extract_subsystem().unwrap();
        assert_eq!(sub.a, model.a());
        assert_eq!(sub.b, model.b);

        let mut diag = tiny(LiftMode::Ddk, 2, 5);
        diag.spectrum = EigenSpectrum::new(vec![], vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let sub = diag.extract_subsystem().unwrap();
        assert_eq!(sub.a, DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]));

        let odd = tiny(LiftMode::Ddk, 3, 6);
        let sub = odd.extract_subsystem().unwrap();
        assert_eq!(sub.dim, 4);
        assert_eq!(sub.b.nrows(), 4);

        let w = tiny(LiftMode::Wddk, 2, 4);
        assert!(matches!(w.extract_subsystem(), Err(DdkError::UnsupportedMode(_))));
    }

    #[test]
    fn latent_width_equal_to_state_width() {
        let model = tiny(LiftMode::Ddk, 4, 4);
        let phi = model.lift(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(phi.as_slice(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn flatten_round_trip() {
        let model = tiny(LiftMode::Ddk, 3, 7);
        let flat = model.flatten();
        assert_eq!(flat.len(), model.n_params());
        let mut other = tiny(LiftMode::Ddk, 3, 7);
        other.spectrum = EigenSpectrum::random(7, &mut rng_from_seed(77)).unwrap();
        other.set_flat(&flat).unwrap();
        assert_eq!(other, model);
        let sq: f64 = flat.iter().map(|v| v * v).sum();
        assert!((sq - model.squared_norm()).abs() < 1e-12 * sq);
    }

    #[test]
    fn param_mut_follows_flatten_order() {
        let mut shape = ModelShape::standard(3, 2, 5, 1, LiftMode::Ddk);
        shape.encoder_hidden = vec![4];
        shape.decoder_hidden = vec![3];
        let mut model = LatentModel::random(shape, NormalizationMeta::default(), &mut rng_from_seed(4)).unwrap();
        let n = model.n_params();
        for i in 0..n {
            *model.param_mut(i).unwrap() = i as f64;
        }
        let flat = model.flatten();
        assert!(flat.iter().enumerate().all(|(i, v)| *v == i as f64));
        assert!(model.param_mut(n).is_none());
    }
}
