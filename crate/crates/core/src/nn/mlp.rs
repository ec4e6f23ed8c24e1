//! Dense multilayer perceptrons.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{DdkError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Tape handles for one network's parameters, `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct MlpVars(pub Vec<(Var, Var)>);

impl Mlp {
    /// Glorot-uniform weights, zero biases. `activations[i]` applies after layer `i`.
    pub fn random<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert_eq!(activations.len(), widths.len() - 1);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)),
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DdkError::InvalidInput("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(DdkError::Dimension {
                    context: "layer bias",
                    expected: l.weight.nrows(),
                    actual: l.bias.len(),
                });
            }
            if i > 0 && l.weight.ncols() != layers[i - 1].weight.nrows() {
                return Err(DdkError::Dimension {
                    context: "adjacent layer widths",
                    expected: layers[i - 1].weight.nrows(),
                    actual: l.weight.ncols(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Forward pass over a batch stored one sample per column.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if input.nrows() != self.input_width() {
            return Err(DdkError::Dimension {
                context: "mlp input",
                expected: self.input_width(),
                actual: input.nrows(),
            });
        }
        let mut h = input.clone();
        for l in &self.layers {
            let mut z = &l.weight * &h;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if l.activation == Activation::Tanh {
                z.apply(|v| *v = super::tape::tanh(*v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_vec(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(input.len(), 1, input.as_slice());
        let out = self.forward(&m)?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(
            self.layers
                .iter()
                .map(|l| {
                    let w = tape.param(l.weight.clone());
                    let b = tape.param(DMatrix::from_column_slice(l.bias.len(), 1, l.bias.as_slice()));
                    (w, b)
                })
                .collect(),
        )
    }

    /// Records the forward pass on `tape`; `x` holds one sample per column.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Var {
        let mut h = x;
        for (l, (w, b)) in self.layers.iter().zip(&vars.0) {
            let z = tape.matmul(*w, h);
            let z = tape.add_bias(z, *b);
            h = match l.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::Identity => z,
            };
        }
        h
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters as `[W0 (row-major), b0, W1, b1, ...]`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.transpose().iter().copied());
            out.extend(l.bias.iter().copied());
        }
    }

    /// Inverse of [`Mlp::flatten_into`]; returns the number of values consumed.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let (r, c) = l.weight.shape();
            l.weight = DMatrix::from_row_slice(r, c, &flat[off..off + r * c]);
            off += r * c;
            l.bias = DVector::from_column_slice(&flat[off..off + r]);
            off += r;
        }
        off
    }

    /// Parameter `index` in flatten order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let (r, c) = l.weight.shape();
            if index < r * c {
                return Some(&mut l.weight[(index / c, index % c)]);
            }
            index -= r * c;
            if index < r {
                return Some(&mut l.bias[index]);
            }
            index -= r;
        }
        None
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.norm_squared() + l.bias.norm_squared())
            .sum()
    }

    /// Gradients for this network's parameters in flatten order.
    pub fn flatten_grads(vars: &MlpVars, grads: &super::tape::Gradients, out: &mut Vec<f64>) {
        for (w, b) in &vars.0 {
            out.extend(grads.wrt(*w).transpose().iter().copied());
            out.extend(grads.wrt(*b).iter().copied());
        }
    }
}
