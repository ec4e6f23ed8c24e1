//! Sampling of fixed-length training sequences.

use nalgebra::DMatrix;
use rand::Rng;

use super::normalize::NormalizationMeta;
use super::transform::{sample_origin, se2_transform, Pose};
use crate::error::{DdkError, Result};
use crate::sim::dataset::Episode;
use crate::sim::vehicle::{CONTROL_DIM, STATE_DIM};

/// Random local-frame ranges: `d_x`, `d_y` in metres, `d_psi` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRanges {
    pub d_x: f64,
    pub d_y: f64,
    pub d_psi: f64,
}

impl FrameRanges {
    pub const ZERO: FrameRanges = FrameRanges {
        d_x: 0.0,
        d_y: 0.0,
        d_psi: 0.0,
    };
}

/// `N` sequences of `p + 1` normalized states and `p` normalized controls.
/// Column `j` of every matrix belongs to sequence `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub horizon: usize,
    pub frames: usize,
    /// Encoder inputs for `s_0 .. s_p`, each `m·c x N`, oldest frame first.
    pub windows: Vec<DMatrix<f64>>,
    /// `s_0 .. s_p`, each `m x N`.
    pub states: Vec<DMatrix<f64>>,
    /// `u_0 .. u_{p-1}`, each `n x N`.
    pub controls: Vec<DMatrix<f64>>,
}

impl SequenceBatch {
    pub fn size(&self) -> usize {
        self.states[0].ncols()
    }

    /// Encoder inputs of all `p + 1` steps side by side (`m·c x (p+1)N`).
    pub fn stacked_windows(&self) -> DMatrix<f64> {
        hstack(&self.windows)
    }

    /// Targets `s_1 .. s_p` side by side (`m x pN`).
    pub fn stacked_targets(&self) -> DMatrix<f64> {
        hstack(&self.states[1..])
    }
}

pub(crate) fn hstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts[0].nrows();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for p in parts {
        out.columns_mut(off, p.ncols()).copy_from(p);
        off += p.ncols();
    }
    out
}

/// One normalized sequence: `p + c` state rows (the first `c - 1` are
/// history) expressed in the frame `origin`, and `p` control rows.
pub fn normalized_sequence(
    ep: &Episode,
    start: usize,
    horizon: usize,
    frames: usize,
    origin: &Pose,
    norm: &NormalizationMeta,
) -> (Vec<[f64; STATE_DIM]>, Vec<[f64; CONTROL_DIM]>) {
    let first = start + 1 - frames;
    let states = (first..=start + horizon)
        .map(|k| {
            let s = &ep.states[k];
            let pose = se2_transform(&[s.x, s.y, s.psi], origin);
            norm.normalize_state(&[pose[0], pose[1], pose[2], s.vx, s.vy, s.r])
        })
        .collect();
    let controls = (start..start + horizon)
        .map(|k| {
            let u = &ep.controls[k];
            norm.normalize_control(&[u.swa, u.engine_physical()])
        })
        .collect();
    (states, controls)
}

/// Uniform sampler over every admissible window start in a set of episodes.
#[derive(Debug, Clone)]
pub struct WindowSampler<'a> {
    episodes: Vec<&'a Episode>,
    /// Cumulative window counts per kept episode.
    cumulative: Vec<usize>,
    horizon: usize,
    frames: usize,
}

impl<'a> WindowSampler<'a> {
    /// Episodes with fewer than `p + c` rows are skipped with a warning.
    pub fn new(episodes: &[&'a Episode], horizon: usize, frames: usize) -> Result<Self> {
        if horizon == 0 || frames == 0 {
            return Err(DdkError::InvalidInput(
                "horizon and frame count must be positive".into(),
            ));
        }
        let need = horizon + frames;
        let mut kept = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0;
        for (i, ep) in episodes.iter().enumerate() {
            if ep.len() < need {
                log::warn!("episode {i} has {} rows, fewer than {need}; skipped", ep.len());
                continue;
            }
            total += ep.len() - need + 1;
            kept.push(*ep);
            cumulative.push(total);
        }
        if kept.is_empty() {
            return Err(DdkError::InvalidInput(format!(
                "no episode has the {need} rows a window needs"
            )));
        }
        Ok(WindowSampler {
            episodes: kept,
            cumulative,
            horizon,
            frames,
        })
    }

    pub fn window_count(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    /// `(episode, start)` of the `index`-th window; `start` is the row of `s_0`.
    pub fn locate(&self, index: usize) -> (&'a Episode, usize) {
        let e = self.cumulative.partition_point(|&c| c <= index);
        let before = if e == 0 { 0 } else { self.cumulative[e - 1] };
        (self.episodes[e], index - before + self.frames - 1)
    }

    pub fn sample<R: Rng>(
        &self,
        size: usize,
        ranges: FrameRanges,
        norm: &NormalizationMeta,
        rng: &mut R,
    ) -> SequenceBatch {
        let (p, c) = (self.horizon, self.frames);
        let m = STATE_DIM;
        let mut windows = vec![DMatrix::zeros(m * c, size); p + 1];
        let mut states = vec![DMatrix::zeros(m, size); p + 1];
        let mut controls = vec![DMatrix::zeros(CONTROL_DIM, size); p];
        for j in 0..size {
            let (ep, start) = self.locate(rng.gen_range(0..self.window_count()));
            let s0 = &ep.states[start];
            let origin = sample_origin(&[s0.x, s0.y, s0.psi], ranges.d_x, ranges.d_y, ranges.d_psi, rng);
            let (seq, ctl) = normalized_sequence(ep, start, p, c, &origin, norm);
            for i in 0..=p {
                for f in 0..c {
                    for r in 0..m {
                        windows[i][(f * m + r, j)] = seq[i + f][r];
                    }
                }
                for r in 0..m {
                    states[i][(r, j)] = seq[i + c - 1][r];
                }
            }
            for (i, u) in ctl.iter().enumerate() {
                controls[i][(0, j)] = u[0];
                controls[i][(1, j)] = u[1];
            }
        }
        SequenceBatch {
            horizon: p,
            frames: c,
            windows,
            states,
            controls,
        }
    }
}

pub fn sample_batch<R: Rng>(
    episodes: &[&Episode],
    size: usize,
    horizon: usize,
    frames: usize,
    ranges: FrameRanges,
    norm: &NormalizationMeta,
    rng: &mut R,
) -> Result<SequenceBatch> {
    Ok(WindowSampler::new(episodes, horizon, frames)?.sample(size, ranges, norm, rng))
}

/// Largest absolute pose, per channel, over every window of `p + c` rows
/// expressed relative to its `s_0`, widened by the frame ranges and padded
/// by 10%.
pub fn fit_pose_bounds(episodes: &[&Episode], horizon: usize, frames: usize, ranges: FrameRanges) -> Result<[f64; 3]> {
    let sampler = WindowSampler::new(episodes, horizon, frames)?;
    let mut max = [0.0f64; 3];
    for ep in &sampler.episodes {
        for start in frames - 1..ep.len() - horizon {
            let s0 = &ep.states[start];
            let origin = [s0.x, s0.y, s0.psi];
            for s in &ep.states[start + 1 - frames..=start + horizon] {
                let q = se2_transform(&[s.x, s.y, s.psi], &origin);
                for i in 0..3 {
                    max[i] = max[i].max(q[i].abs());
                }
            }
        }
    }
    // A random frame can move the origin by the ranges in each direction; the
    // rotation part is bounded through the translation radius.
    let radius = (ranges.d_x * ranges.d_x + ranges.d_y * ranges.d_y).sqrt();
    let reach = (max[0] * max[0] + max[1] * max[1]).sqrt();
    let rot = reach * ranges.d_psi.min(std::f64::consts::FRAC_PI_2).sin();
    Ok([
        1.1 * (max[0] + radius + rot),
        1.1 * (max[1] + radius + rot),
        1.1 * (max[2] + ranges.d_psi),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::vehicle::{Control, VehicleState};
    use crate::util::rng_from_seed;

    fn straight(n: usize, heading: f64) -> Episode {
        let (s, c) = heading.sin_cos();
        Episode {
            dt: 0.01,
            states: (0..n)
                .map(|k| {
                    VehicleState::new(
                        5.0 + 0.1 * k as f64 * c,
                        -3.0 + 0.1 * k as f64 * s,
                        heading,
                        10.0,
                        0.0,
                        0.0,
                    )
                })
                .collect(),
            controls: vec![Control::new(0.0, 0.05); n],
        }
    }

    #[test]
    fn straight_line_relative_to_first_pose() {
        let ep = straight(30, 0.8);
        let norm = NormalizationMeta::default();
        let b = sample_batch(&[&ep], 1, 5, 1, FrameRanges::ZERO, &norm, &mut rng_from_seed(2)).unwrap();
        let gx = norm.state_gains()[0];
        assert!(b.states[0].column(0).rows(0, 3).iter().all(|v| v.abs() < 1e-12));
        for i in 0..=5 {
            assert!((b.states[i][(0, 0)] - 0.1 * i as f64 * gx).abs() < 1e-12);
            assert!(b.states[i][(1, 0)].abs() < 1e-12);
            assert!(b.states[i][(2, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn table_shapes_and_replay() {
        let ep = straight(400, 0.0);
        let norm = NormalizationMeta::default();
        let ranges = FrameRanges {
            d_x: 2.0,
            d_y: 2.0,
            d_psi: 20f64.to_radians(),
        };
        let b = sample_batch(&[&ep], 256, 50, 1, ranges, &norm, &mut rng_from_seed(5)).unwrap();
        assert_eq!(b.states.len(), 51);
        assert_eq!(b.controls.len(), 50);
        assert_eq!(b.states[0].shape(), (6, 256));
        assert_eq!(b.controls[0].shape(), (2, 256));
        let again = sample_batch(&[&ep], 256, 50, 1, ranges, &norm, &mut rng_from_seed(5)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn short_episodes_skipped() {
        let short = straight(4, 0.0);
        let long = straight(12, 0.0);
        let s = WindowSampler::new(&[&short, &long], 5, 1).unwrap();
        assert_eq!(s.window_count(), 7);
        assert!(WindowSampler::new(&[&short], 5, 1).is_err());
    }

    #[test]
    fn windows_never_cross_episodes() {
        let a = straight(10, 0.0);
        let b = straight(8, 1.0);
        let s = WindowSampler::new(&[&a, &b], 3, 2).unwrap();
        for i in 0..s.window_count() {
            let (ep, start) = s.locate(i);
            assert!(start >= 1 && start + 3 < ep.len());
        }
        assert_eq!(s.window_count(), (10 - 5 + 1) + (8 - 5 + 1));
    }

    #[test]
    fn frame_stacking_layout() {
        let ep = straight(20, 0.0);
        let norm = NormalizationMeta::default();
        let b = sample_batch(&[&ep], 3, 4, 2, FrameRanges::ZERO, &norm, &mut rng_from_seed(8)).unwrap();
        for i in 0..=4 {
            assert_eq!(b.windows[i].rows(6, 6), b.states[i].rows(0, 6));
            if i > 0 {
                assert_eq!(b.windows[i].rows(0, 6), b.states[i - 1].rows(0, 6));
            }
        }
    }

    #[test]
    fn pose_bounds_cover_samples() {
        let ep = straight(200, 0.3);
        let ranges = FrameRanges {
            d_x: 2.0,
            d_y: 2.0,
            d_psi: 0.35,
        };
        let bounds = fit_pose_bounds(&[&ep], 50, 1, ranges).unwrap();
        let norm = NormalizationMeta::default().with_pose_bounds(bounds[0], bounds[1], bounds[2]);
        let b = sample_batch(&[&ep], 500, 50, 1, ranges, &norm, &mut rng_from_seed(1)).unwrap();
        for s in &b.states {
            assert!(s.rows(0, 3).iter().all(|v| v.abs() <= 2.0));
        }
    }
}
