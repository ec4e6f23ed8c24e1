//! Preprocessing, losses and the training loop.

pub mod batch;
pub mod config;
pub mod loss;
pub mod normalize;
pub mod trainer;
pub mod transform;

pub use batch::{fit_pose_bounds, sample_batch, FrameRanges, SequenceBatch, WindowSampler};
pub use config::TrainConfig;
pub use loss::{loss_and_gradient, loss_terms, LossTerms, LossWeights};
pub use normalize::{AffineRange, NormalizationMeta};
pub use trainer::{fit_normalization, train, write_train_log, EpochRecord, TrainOutcome, TRAIN_LOG_HEADER};
pub use transform::{sample_origin, se2_inverse, se2_transform, Pose};
