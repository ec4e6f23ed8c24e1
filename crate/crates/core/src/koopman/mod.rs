//! The DDK latent model: spectrum, lifting, linear evolution, decoding.

pub mod checkpoint;
pub mod model;
pub mod spectrum;

pub use checkpoint::{Checkpoint, TrainingInfo};
pub use model::{LatentModel, LiftMode, ModelShape, ModelVars, Subsystem};
pub use spectrum::{allocate_eigenvalues, EigenSpectrum};
