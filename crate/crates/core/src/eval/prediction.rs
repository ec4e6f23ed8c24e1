//! Multi-step open-loop prediction accuracy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DdkError, Result};
use crate::koopman::model::LatentModel;
use crate::sim::dataset::Episode;
use crate::sim::vehicle::STATE_DIM;
use crate::train::batch::normalized_sequence;
use crate::train::transform::{se2_inverse, Pose};
use crate::util::wrap_angle;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const STATE_NAMES: [&str; STATE_DIM] = ["x", "y", "psi", "vx", "vy", "r"];

/// Anything that predicts `s_{start+1} .. s_{start+horizon}` of an episode
/// from its recorded past and recorded controls.
pub trait Predictor {
    /// Rows needed before `start` (inclusive of `start` itself).
    fn history(&self) -> usize {
        1
    }

    fn predict(&self, ep: &Episode, start: usize, horizon: usize) -> Result<Vec<[f64; STATE_DIM]>>;
}

/// Lifts once in the frame of the window's first pose, rolls the latent
/// state forward under the recorded controls, decodes every step and maps
/// back to physical global coordinates.
pub fn predict_in_frame(
    model: &LatentModel,
    ep: &Episode,
    start: usize,
    horizon: usize,
    origin: &Pose,
) -> Result<Vec<[f64; STATE_DIM]>> {
    let frames = model.shape.frames;
    let m = model.state_dim();
    let (seq, ctl) = normalized_sequence(ep, start, horizon, frames, origin, &model.norm);
    let window: Vec<f64> = seq[..frames].iter().flat_map(|r| r.iter().copied()).collect();
    let phi0 = model.lift(&window)?;
    let controls: Vec<DVector<f64>> = ctl.iter().map(|u| DVector::from_column_slice(u)).collect();
    let latents = model.latent_rollout(&phi0, &controls)?;
    let mut stacked = DMatrix::zeros(model.latent_dim(), horizon);
    for (j, phi) in latents.iter().enumerate() {
        stacked.set_column(j, phi);
    }
    let decoded = model.decode_batch(&stacked)?;
    let out = (0..horizon)
        .map(|j| {
            let z: [f64; STATE_DIM] = std::array::from_fn(|i| decoded[(i, j)]);
            debug_assert_eq!(m, STATE_DIM);
            let s = model.norm.denormalize_state(&z);
            let pose = se2_inverse(&[s[0], s[1], s[2]], origin);
            [pose[0], pose[1], pose[2], s[3], s[4], s[5]]
        })
        .collect();
    Ok(out)
}

impl Predictor for LatentModel {
    fn history(&self) -> usize {
        self.shape.frames
    }

    fn predict(&self, ep: &Episode, start: usize, horizon: usize) -> Result<Vec<[f64; STATE_DIM]>> {
        let s0 = &ep.states[start];
        predict_in_frame(self, ep, start, horizon, &[s0.x, s0.y, s0.psi])
    }
}

/// Per-dimension root-mean-square error over every predicted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub format_version: u32,
    pub horizon: usize,
    pub episodes: usize,
    pub windows: usize,
    /// `x, y, psi, vx, vy, r` in m, m, rad, m/s, m/s, rad/s.
    pub rmse: [f64; STATE_DIM],
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub checkpoint_hash: String,
}

/// Running sums of squared per-dimension errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SquaredErrors {
    pub sum: [f64; STATE_DIM],
    pub count: usize,
}

impl SquaredErrors {
    pub fn push(&mut self, predicted: &[f64; STATE_DIM], actual: &[f64; STATE_DIM]) {
        for i in 0..STATE_DIM {
            let mut d = predicted[i] - actual[i];
            if i == 2 {
                d = wrap_angle(d);
            }
            self.sum[i] += d * d;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &SquaredErrors) {
        for i in 0..STATE_DIM {
            self.sum[i] += other.sum[i];
        }
        self.count += other.count;
    }

    pub fn rmse(&self) -> [f64; STATE_DIM] {
        let n = self.count.max(1) as f64;
        std::array::from_fn(|i| (self.sum[i] / n).sqrt())
    }
}

/// Window starts for consecutive, non-overlapping windows of `horizon` steps.
pub fn window_starts(len: usize, history: usize, horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = history - 1;
    while start + horizon < len {
        out.push(start);
        start += horizon;
    }
    out
}

pub fn prediction_errors<P: Predictor + ?Sized>(
    predictor: &P,
    ep: &Episode,
    horizon: usize,
) -> Result<(SquaredErrors, usize)> {
    let mut acc = SquaredErrors::default();
    let starts = window_starts(ep.len(), predictor.history(), horizon);
    for &start in &starts {
        let pred = predictor.predict(ep, start, horizon)?;
        for (j, p) in pred.iter().enumerate() {
            acc.push(p, &ep.states[start + 1 + j].to_array());
        }
    }
    Ok((acc, starts.len()))
}

/// RMSE over consecutive non-overlapping windows of every episode.
pub fn rmse_prediction<P: Predictor + ?Sized>(
    predictor: &P,
    episodes: &[&Episode],
    horizon: usize,
) -> Result<PredictionReport> {
    if horizon == 0 {
        return Err(DdkError::InvalidInput("prediction horizon must be positive".into()));
    }
    let mut acc = SquaredErrors::default();
    let mut windows = 0;
    for ep in episodes {
        let (e, w) = prediction_errors(predictor, ep, horizon)?;
        acc.merge(&e);
        windows += w;
    }
    if windows == 0 {
        return Err(DdkError::InvalidInput(format!(
            "no episode is long enough for a {horizon}-step window"
        )));
    }
    Ok(PredictionReport {
        format_version: REPORT_FORMAT_VERSION,
        horizon,
        episodes: episodes.len(),
        windows,
        rmse: acc.rmse(),
        config_hash: String::new(),
        checkpoint_hash: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::dataset::collect_episodes;

    struct Replay {
        offset: [f64; STATE_DIM],
    }

    impl Predictor for Replay {
        fn predict(&self, ep: &Episode, start: usize, horizon: usize) -> Result<Vec<[f64; STATE_DIM]>> {
            Ok((1..=horizon)
                .map(|j| {
                    let s = ep.states[start + j].to_array();
                    std::array::from_fn(|i| s[i] + self.offset[i])
                })
                .collect())
        }
    }

    #[test]
    fn exact_replay_has_zero_error() {
        let ds = collect_episodes(2, (300, 400), 0.01, 3).unwrap();
        let eps: Vec<&Episode> = ds.episodes.iter().collect();
        let r = rmse_prediction(&Replay { offset: [0.0; 6] }, &eps, 120).unwrap();
        assert_eq!(r.rmse, [0.0; 6]);
        assert!(r.windows >= 4);
    }

    #[test]
    fn constant_offset_in_x() {
        let ds = collect_episodes(2, (300, 400), 0.01, 3).unwrap();
        let eps: Vec<&Episode> = ds.episodes.iter().collect();
        let r = rmse_prediction(
            &Replay {
                offset: [0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
            },
            &eps,
            50,
        )
        .unwrap();
        assert!((r.rmse[0] - 0.3).abs() < 1e-12);
        assert_eq!(&r.rmse[1..], &[0.0; 5]);
    }

    #[test]
    fn pooled_equals_concatenated() {
        let mut a = SquaredErrors::default();
        let mut b = SquaredErrors::default();
        let mut pooled = SquaredErrors::default();
        let zero = [0.0; 6];
        for k in 0..7 {
            let e = [k as f64; 6];
            a.push(&e, &zero);
            pooled.push(&e, &zero);
        }
        for k in 0..3 {
            let e = [10.0 + k as f64; 6];
            b.push(&e, &zero);
            pooled.push(&e, &zero);
        }
        a.merge(&b);
        for (x, y) in a.rmse().iter().zip(pooled.rmse()) {
            assert!((x - y).abs() < 1e-12);
        }
        let expected = ((0..7).map(|k| (k * k) as f64).sum::<f64>() + 100.0 + 121.0 + 144.0) / 10.0;
        assert!((a.rmse()[0] - expected.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn window_layout() {
        assert_eq!(window_starts(250, 1, 120), vec![0, 120]);
        assert_eq!(window_starts(241, 1, 120), vec![0, 120]);
        assert_eq!(window_starts(240, 1, 120), vec![0]);
        assert_eq!(window_starts(10, 3, 4), vec![2]);
    }
}
