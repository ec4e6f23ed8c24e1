//! Nonlinear ground-truth plant and data collection.

pub mod dataset;
pub mod excite;
pub mod reference;
pub mod vehicle;

pub use dataset::{collect_episodes, load_dataset, save_dataset, Dataset, Episode, Split};
pub use excite::{excite, Exciter};
pub use reference::{ReferenceDriver, ReferenceTrajectory};
pub use vehicle::{rollout, step, Control, VehicleParams, VehicleState, CONTROL_DIM, STATE_DIM};
