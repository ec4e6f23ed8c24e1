//! JSON checkpoints.
//!
//! The transition matrix is never stored; it is rebuilt from the spectrum on
//! load. Network parameters are stored per layer, weights row-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{LatentModel, ModelShape};
use super::spectrum::EigenSpectrum;
use crate::error::{DdkError, Result};
use crate::nn::mlp::{Activation, Layer, Mlp};
use crate::train::normalize::NormalizationMeta;
use crate::util::sha256_hex;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    /// `[W0 (row-major), b0, W1, b1, ...]`.
    pub params: Vec<f64>,
}

impl NetRecord {
    fn from_mlp(net: &Mlp) -> Self {
        let mut params = Vec::with_capacity(net.n_params());
        net.flatten_into(&mut params);
        NetRecord {
            widths: net.widths(),
            activations: net.activations(),
            params,
        }
    }

    fn to_mlp(&self, what: &'static str) -> Result<Mlp> {
        if self.widths.len() < 2 || self.activations.len() + 1 != self.widths.len() {
            return Err(DdkError::InvalidInput(format!(
                "{what}: inconsistent widths/activations"
            )));
        }
        let layers = self
            .widths
            .windows(2)
            .zip(&self.activations)
            .map(|(w, &activation)| Layer {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
                activation,
            })
            .collect();
        let mut net = Mlp::from_layers(layers)?;
        if self.params.len() != net.n_params() {
            return Err(DdkError::Dimension {
                context: what,
                expected: net.n_params(),
                actual: self.params.len(),
            });
        }
        net.unflatten_from(&self.params);
        Ok(net)
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shape: ModelShape,
    pub encoder: NetRecord,
    pub decoder: NetRecord,
    pub spectrum: EigenSpectrum,
    pub b_rows: usize,
    pub b_cols: usize,
    /// Row-major.
    pub b: Vec<f64>,
    pub normalization: NormalizationMeta,
    pub info: TrainingInfo,
}

impl Checkpoint {
    pub fn from_model(model: &LatentModel, info: TrainingInfo) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            shape: model.shape.clone(),
            encoder: NetRecord::from_mlp(&model.encoder),
            decoder: NetRecord::from_mlp(&model.decoder),
            spectrum: model.spectrum.clone(),
            b_rows: model.b.nrows(),
            b_cols: model.b.ncols(),
            b: model.b.transpose().iter().copied().collect(),
            normalization: model.norm.clone(),
            info,
        }
    }

    pub fn to_model(&self) -> Result<LatentModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(DdkError::InvalidInput(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        self.shape.validate()?;
        let encoder = self.encoder.to_mlp("checkpoint encoder")?;
        let decoder = self.decoder.to_mlp("checkpoint decoder")?;
        if encoder.widths() != self.shape.encoder_widths() {
            return Err(DdkError::InvalidInput(
                "encoder widths disagree with model shape".into(),
            ));
        }
        if decoder.widths() != self.shape.decoder_widths() {
            return Err(DdkError::InvalidInput(
                "decoder widths disagree with model shape".into(),
            ));
        }
        if self.spectrum.dim() != self.shape.latent_dim {
            return Err(DdkError::Dimension {
                context: "checkpoint spectrum",
                expected: self.shape.latent_dim,
                actual: self.spectrum.dim(),
            });
        }
        if self.b_rows != self.shape.latent_dim
            || self.b_cols != self.shape.control_dim
            || self.b.len() != self.b_rows * self.b_cols
        {
            return Err(DdkError::InvalidInput("checkpoint B has the wrong shape".into()));
        }
        let model = LatentModel {
            shape: self.shape.clone(),
            encoder,
            decoder,
            spectrum: self.spectrum.clone(),
            b: DMatrix::from_row_slice(self.b_rows, self.b_cols, &self.b),
            norm: self.normalization.clone(),
        };
        if model.flatten().iter().any(|v| !v.is_finite()) {
            return Err(DdkError::NumericDomain("checkpoint parameters".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| DdkError::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| DdkError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DdkError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DdkError::parse(path, e))
    }
}

/// SHA-256 of a checkpoint file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| DdkError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Loads a checkpoint file and rebuilds its model; also returns the file hash.
pub fn load_model(path: &Path) -> Result<(LatentModel, Checkpoint, String)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.to_model()?;
    Ok((model, ckpt, file_hash(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::model::LiftMode;
    use crate::util::rng_from_seed;

    #[test]
    fn json_round_trip_is_exact() {
        let mut shape = ModelShape::standard(6, 2, 9, 1, LiftMode::Ddk);
        shape.encoder_hidden = vec![7];
        let model = LatentModel::random(shape, NormalizationMeta::default(), &mut rng_from_seed(4)).unwrap();
        let ckpt = Checkpoint::from_model(&model, TrainingInfo::default());
        let back: Checkpoint = serde_json::from_str(&ckpt.to_json()).unwrap();
        assert_eq!(back.to_model().unwrap(), model);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        let (loaded, _, hash) = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(hash.len(), 64);
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let shape = ModelShape::standard(2, 2, 4, 1, LiftMode::Wddk);
        let model = LatentModel::random(shape, NormalizationMeta::default(), &mut rng_from_seed(4)).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, TrainingInfo::default());
        ckpt.format_version = 99;
        assert!(ckpt.to_model().is_err());
        ckpt.format_version = CHECKPOINT_FORMAT_VERSION;
        ckpt.b.pop();
        assert!(ckpt.to_model().is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = Checkpoint::load(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.json"));
    }
}
