//! Prediction and tracking metrics and their reports.

pub mod prediction;
pub mod tracking;

pub use prediction::{predict_in_frame, rmse_prediction, PredictionReport, Predictor, REPORT_FORMAT_VERSION};
pub use tracking::{path_distance, step_errors, tracking_errors, ErrorStats, StepErrors, TrackingReport};
