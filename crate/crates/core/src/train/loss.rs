//! The weighted training loss and its gradient.
//!
//! With `N` sequences in a batch and horizon `p`:
//!
//! - `L_r  = 1/(pN) Σ_j Σ_{i=1..p} ‖s_i − φ_d(φ(s_i))‖²`
//! - `L_l  = 1/(pN) Σ_j Σ_{i=1..p} ‖φ(s_i) − φ̂_i‖²`, `φ̂_i = A φ̂_{i−1} + B u_{i−1}`, `φ̂_0 = φ(s_0)`
//! - `L_mr = 1/N Σ_j Σ_{i=1..p} ‖s_i − φ_d(φ̂_i)‖²`
//! - `l2` the squared norm of every trainable value
//!
//! and `L = α1 L_r + α2 L_l + α3 L_mr + α4 l2`.

use serde::{Deserialize, Serialize};

use super::batch::SequenceBatch;
use crate::error::{DdkError, Result};
use crate::koopman::model::{LatentModel, ModelVars};
use crate::nn::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub linear: f64,
    pub multistep: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            linear: 1.0,
            multistep: 1.0,
            l2: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub linear: f64,
    pub multistep: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.recon * self.recon + w.linear * self.linear + w.multistep * self.multistep + w.l2 * self.l2
    }
}

struct LossGraph {
    recon: Var,
    linear: Var,
    multistep: Var,
    l2: Var,
    total: Var,
}

fn check_batch(model: &LatentModel, batch: &SequenceBatch) -> Result<()> {
    let width = model.state_dim() * model.shape.frames;
    let got = batch.windows[0].nrows();
    if got != width {
        return Err(DdkError::Dimension {
            context: "batch window width",
            expected: width,
            actual: got,
        });
    }
    let got = batch.controls.first().map_or(model.control_dim(), |u| u.nrows());
    if got != model.control_dim() {
        return Err(DdkError::Dimension {
            context: "batch control width",
            expected: model.control_dim(),
            actual: got,
        });
    }
    if batch.horizon == 0 {
        return Err(DdkError::InvalidInput("batch horizon must be at least 1".into()));
    }
    Ok(())
}

fn record(tape: &mut Tape, model: &LatentModel, vars: &ModelVars, batch: &SequenceBatch, w: &LossWeights) -> LossGraph {
    let n = batch.size();
    let p = batch.horizon;
    let inv_pn = 1.0 / (p * n) as f64;

    let x = tape.constant(batch.stacked_windows());
    let targets = tape.constant(batch.stacked_targets());
    let phi_all = model.lift_tape(tape, vars, x);
    let phi0 = tape.cols(phi_all, 0, n);
    let phi_obs = tape.cols(phi_all, n, p * n);

    let recon_out = model.decoder.forward_tape(tape, &vars.decoder, phi_obs);
    let d = tape.sub(recon_out, targets);
    let ss = tape.sum_squares(d);
    let recon = tape.scale(ss, inv_pn);

    let a = tape.block_diag(vars.c, vars.p, vars.reals);
    let mut phi = phi0;
    let mut preds = Vec::with_capacity(p);
    for u in &batch.controls {
        let u = tape.constant(u.clone());
        let ap = tape.matmul(a, phi);
        let bu = tape.matmul(vars.b, u);
        phi = tape.add(ap, bu);
        preds.push(phi);
    }
    let pred = tape.hcat(&preds);
    let d = tape.sub(phi_obs, pred);
    let ss = tape.sum_squares(d);
    let linear = tape.scale(ss, inv_pn);

    let pred_out = model.decoder.forward_tape(tape, &vars.decoder, pred);
    let d = tape.sub(pred_out, targets);
    let ss = tape.sum_squares(d);
    let multistep = tape.scale(ss, 1.0 / n as f64);

    let mut params: Vec<Var> = Vec::new();
    for (wv, bv) in vars.encoder.0.iter().chain(&vars.decoder.0) {
        params.push(*wv);
        params.push(*bv);
    }
    params.extend([vars.c, vars.p, vars.reals, vars.b]);
    let mut l2 = tape.sum_squares(params[0]);
    for v in &params[1..] {
        let s = tape.sum_squares(*v);
        l2 = tape.add(l2, s);
    }

    let t1 = tape.scale(recon, w.recon);
    let t2 = tape.scale(linear, w.linear);
    let t3 = tape.scale(multistep, w.multistep);
    let t4 = tape.scale(l2, w.l2);
    let s12 = tape.add(t1, t2);
    let s34 = tape.add(t3, t4);
    let total = tape.add(s12, s34);
    LossGraph {
        recon,
        linear,
        multistep,
        l2,
        total,
    }
}

fn read_terms(tape: &Tape, g: &LossGraph) -> Result<LossTerms> {
    let terms = LossTerms {
        recon: tape.scalar(g.recon),
        linear: tape.scalar(g.linear),
        multistep: tape.scalar(g.multistep),
        l2: tape.scalar(g.l2),
        total: tape.scalar(g.total),
    };
    for (name, v) in [
        ("L_r", terms.recon),
        ("L_l", terms.linear),
        ("L_mr", terms.multistep),
        ("l2", terms.l2),
        ("L", terms.total),
    ] {
        if !v.is_finite() {
            return Err(DdkError::NonFiniteLoss(name));
        }
    }
    Ok(terms)
}

/// Loss terms without gradients.
pub fn loss_terms(model: &LatentModel, batch: &SequenceBatch, w: &LossWeights) -> Result<LossTerms> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let g = record(&mut tape, model, &vars, batch, w);
    read_terms(&tape, &g)
}

/// Loss terms and the gradient of `L` in [`LatentModel::flatten`] order.
pub fn loss_and_gradient(model: &LatentModel, batch: &SequenceBatch, w: &LossWeights) -> Result<(LossTerms, Vec<f64>)> {
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let g = record(&mut tape, model, &vars, batch, w);
    let terms = read_terms(&tape, &g)?;
    let grads = tape.backward(g.total)?;
    Ok((terms, model.flatten_grads(&vars, &grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::model::{LiftMode, ModelShape};
    use crate::koopman::spectrum::EigenSpectrum;
    use crate::nn::gradcheck::finite_diff_check;
    use crate::nn::mlp::{Activation, Layer, Mlp};
    use crate::train::normalize::NormalizationMeta;
    use crate::util::rng_from_seed;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn tiny_model(m: usize, k: usize, seed: u64) -> LatentModel {
        let mut shape = ModelShape::standard(m, 2, k, 1, LiftMode::Ddk);
        shape.encoder_hidden = vec![5];
        shape.decoder_hidden = vec![4];
        let mut model = LatentModel::random(shape, NormalizationMeta::default(), &mut rng_from_seed(seed)).unwrap();
        // Move B and the biases away from their small/zero initial values so
        // every gradient entry is exercised.
        let mut rng = rng_from_seed(seed + 1);
        let mut flat = model.flatten();
        for v in flat.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        model.set_flat(&flat).unwrap();
        model
    }

    fn random_batch(m: usize, n: usize, p: usize, seed: u64) -> SequenceBatch {
        let mut rng = rng_from_seed(seed);
        let states: Vec<DMatrix<f64>> = (0..=p)
            .map(|_| DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let controls = (0..p)
            .map(|_| DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        SequenceBatch {
            horizon: p,
            frames: 1,
            windows: states.clone(),
            states,
            controls,
        }
    }

    /// Per-sequence, per-step recomputation through the model's own
    /// non-recording methods.
    fn oracle(model: &LatentModel, b: &SequenceBatch, w: &LossWeights) -> LossTerms {
        let (n, p) = (b.size(), b.horizon);
        let (mut lr, mut ll, mut lmr) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let col = |mat: &DMatrix<f64>| DVector::from_column_slice(mat.column(j).as_slice());
            let mut phi_hat = model.lift(col(&b.windows[0]).as_slice()).unwrap();
            for i in 1..=p {
                let s = col(&b.states[i]);
                let phi = model.lift(col(&b.windows[i]).as_slice()).unwrap();
                lr += (&s - model.decode(&phi).unwrap()).norm_squared();
                phi_hat = model.latent_step(&phi_hat, &col(&b.controls[i - 1])).unwrap();
                ll += (&phi - &phi_hat).norm_squared();
                lmr += (&s - model.decode(&phi_hat).unwrap()).norm_squared();
            }
        }
        let l2 = model.flatten().iter().map(|v| v * v).sum();
        let mut t = LossTerms {
            recon: lr / (p * n) as f64,
            linear: ll / (p * n) as f64,
            multistep: lmr / n as f64,
            l2,
            total: 0.0,
        };
        t.total = t.weighted_total(w);
        t
    }

    #[test]
    fn terms_match_scalar_recomputation() {
        let model = tiny_model(3, 5, 1);
        let b = random_batch(3, 4, 2, 2);
        let w = LossWeights {
            recon: 0.7,
            linear: 1.3,
            multistep: 0.9,
            l2: 1e-3,
        };
        let got = loss_terms(&model, &b, &w).unwrap();
        let want = oracle(&model, &b, &w);
        for (g, e) in [
            (got.recon, want.recon),
            (got.linear, want.linear),
            (got.multistep, want.multistep),
            (got.l2, want.l2),
            (got.total, want.total),
        ] {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{g} vs {e}");
        }
        assert!((got.total - got.weighted_total(&w)).abs() < 1e-14 * got.total);
    }

    #[test]
    fn l2_weight_is_linear() {
        let model = tiny_model(2, 4, 3);
        let b = random_batch(2, 4, 3, 4);
        let w0 = LossWeights {
            l2: 0.0,
            ..LossWeights::default()
        };
        let w1 = LossWeights::default();
        let a = loss_terms(&model, &b, &w0).unwrap();
        let c = loss_terms(&model, &b, &w1).unwrap();
        assert!((c.total - a.total - 1e-6 * a.l2).abs() < 1e-14 * c.total.max(1.0));
    }

    #[test]
    fn exact_fit_has_zero_data_terms() {
        // A = I, B = 0, constant sequences, encoder tail zero and a linear
        // decoder that reads back the first m latent entries.
        let (m, k) = (2, 4);
        let mut model = tiny_model(m, k, 5);
        model.spectrum = EigenSpectrum::new(vec![(1.0, 0.0); 2], vec![]);
        model.b = DMatrix::zeros(k, 2);
        model.encoder = Mlp::from_layers(vec![Layer {
            weight: DMatrix::zeros(k - m, m),
            bias: DVector::zeros(k - m),
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut sel = DMatrix::zeros(m, k);
        sel[(0, 0)] = 1.0;
        sel[(1, 1)] = 1.0;
        model.decoder = Mlp::from_layers(vec![Layer {
            weight: sel,
            bias: DVector::zeros(m),
            activation: Activation::Identity,
        }])
        .unwrap();
        let s = DMatrix::from_fn(m, 3, |i, j| 0.1 * (i + 2 * j) as f64 - 0.2);
        let b = SequenceBatch {
            horizon: 4,
            frames: 1,
            windows: vec![s.clone(); 5],
            states: vec![s; 5],
            controls: vec![DMatrix::from_element(2, 3, 0.4); 4],
        };
        let t = loss_terms(&model, &b, &LossWeights::default()).unwrap();
        assert_eq!((t.recon, t.linear, t.multistep), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = tiny_model(2, 4, 7);
        let b = random_batch(2, 4, 3, 8);
        let w = LossWeights::default();
        let f = |theta: &[f64]| {
            let mut mm = model.clone();
            mm.set_flat(theta).unwrap();
            let (t, g) = loss_and_gradient(&mm, &b, &w).unwrap();
            (t.total, g)
        };
        let err = finite_diff_check(f, &model.flatten(), 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn non_finite_loss_names_term() {
        let mut model = tiny_model(2, 4, 9);
        model.spectrum.pairs[0].0 = 1e200;
        let b = random_batch(2, 2, 3, 1);
        let err = loss_terms(&model, &b, &LossWeights::default()).unwrap_err();
        assert!(matches!(err, DdkError::NonFiniteLoss(_)), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = tiny_model(3, 5, 1);
        let b = random_batch(2, 4, 2, 2);
        assert!(matches!(
            loss_terms(&model, &b, &LossWeights::default()),
            Err(DdkError::Dimension { .. })
        ));
    }
}
