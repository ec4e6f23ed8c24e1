//! Minimal dense neural-network engine.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use gradcheck::finite_diff_check;
pub use mlp::{Activation, Layer, Mlp, MlpVars};
pub use tape::{Gradients, Mat, Tape, Var};
