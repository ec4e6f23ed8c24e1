//! Model predictive tracking control on the latent linear model, plus a
//! geometric baseline.

pub mod config;
pub mod controller;
pub mod prediction;
pub mod pursuit;
pub mod qp;
pub mod track;

pub use config::MpcConfig;
pub use controller::{build_qp, mpc_step, MpcController, StepOutput};
pub use prediction::{augment, build_prediction, AugmentedModel, PredictionMatrices};
pub use pursuit::PurePursuit;
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpProblem, QpSolution, QpSolver, SolverSettings};
pub use track::{track, track_with, MpcTracker, TrackingController, TrackingLog, TrackingRow, TRACKING_HEADER};
