//! Training configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::batch::FrameRanges;
use super::loss::LossWeights;
use crate::error::{DdkError, Result};
use crate::koopman::model::{LiftMode, ModelShape};
use crate::sim::vehicle::{CONTROL_DIM, STATE_DIM};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub frames: usize,
    pub mode: LiftMode,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 22,
            frames: 1,
            mode: LiftMode::Ddk,
            encoder_hidden: vec![64, 128],
            decoder_hidden: vec![128, 64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Abort once validation loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 200,
            steps_per_epoch: 150,
            seed: 0,
            divergence_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Rollout length `p`.
    pub horizon: usize,
    pub alpha_recon: f64,
    pub alpha_linear: f64,
    pub alpha_multistep: f64,
    pub alpha_l2: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            horizon: 50,
            alpha_recon: w.recon,
            alpha_linear: w.linear,
            alpha_multistep: w.multistep,
            alpha_l2: w.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub d_x: f64,
    pub d_y: f64,
    pub d_psi_deg: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        FrameSection {
            d_x: 2.0,
            d_y: 2.0,
            d_psi_deg: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    /// Fixed validation batches drawn once per run.
    pub batches: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { batches: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSection,
    pub optim: OptimSection,
    pub loss: LossSection,
    pub frame: FrameSection,
    pub validation: ValidationSection,
}

impl TrainConfig {
    /// Small configuration for quick checks: `K = 8`, `p = 20`, batch 64,
    /// 200 steps.
    pub fn smoke() -> Self {
        let mut c = TrainConfig::default();
        c.model.latent_dim = 8;
        c.loss.horizon = 20;
        c.optim.batch_size = 64;
        c.optim.epochs = 20;
        c.optim.steps_per_epoch = 10;
        c.validation.batches = 2;
        c
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DdkError::io(path, e))?;
        TrainConfig::from_toml_str(&text).map_err(|m| DdkError::parse(path, m))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.optim.batch_size == 0 || self.loss.horizon == 0 || self.model.frames == 0 {
            return Err("batch_size, horizon and frames must be positive".into());
        }
        if !(self.optim.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if self.model.mode == LiftMode::Ddk && self.model.latent_dim < STATE_DIM {
            return Err(format!("latent_dim must be at least {STATE_DIM} in ddk mode"));
        }
        if self.model.latent_dim == 0 {
            return Err("latent_dim must be positive".into());
        }
        let r = &self.frame;
        if r.d_x < 0.0 || r.d_y < 0.0 || r.d_psi_deg < 0.0 {
            return Err("frame ranges must be non-negative".into());
        }
        Ok(())
    }

    pub fn shape(&self) -> ModelShape {
        let mut s = ModelShape::standard(
            STATE_DIM,
            CONTROL_DIM,
            self.model.latent_dim,
            self.model.frames,
            self.model.mode,
        );
        s.encoder_hidden = self.model.encoder_hidden.clone();
        s.decoder_hidden = self.model.decoder_hidden.clone();
        s
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            recon: self.loss.alpha_recon,
            linear: self.loss.alpha_linear,
            multistep: self.loss.alpha_multistep,
            l2: self.loss.alpha_l2,
        }
    }

    pub fn ranges(&self) -> FrameRanges {
        FrameRanges {
            d_x: self.frame.d_x,
            d_y: self.frame.d_y,
            d_psi: self.frame.d_psi_deg.to_radians(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serialization cannot fail")
                .as_bytes(),
        )
    }
}
