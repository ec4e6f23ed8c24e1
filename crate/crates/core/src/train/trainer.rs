//! The training loop: sample, differentiate, update, validate.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::batch::{fit_pose_bounds, SequenceBatch, WindowSampler};
use super::config::TrainConfig;
use super::loss::{loss_and_gradient, loss_terms, LossTerms};
use super::normalize::NormalizationMeta;
use crate::error::{DdkError, Result};
use crate::koopman::checkpoint::TrainingInfo;
use crate::koopman::model::LatentModel;
use crate::nn::adam::AdamState;
use crate::sim::dataset::{Dataset, Episode, Split};
use crate::util::rng_from_seed;

pub const TRAIN_LOG_HEADER: &str = "epoch,L,L_r,L_l,L_mr,l2,val_L,spectral_radius";

/// One training-log row. Epoch 0 describes the initial model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-step training terms over the epoch.
    pub train: LossTerms,
    pub val_loss: f64,
    pub spectral_radius: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let t = &self.train;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, t.total, t.recon, t.linear, t.multistep, t.l2, self.val_loss, self.spectral_radius
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub model: LatentModel,
    pub log: Vec<EpochRecord>,
    pub info: TrainingInfo,
}

/// Pose ranges fitted to the training windows; velocity and control ranges
/// are fixed.
pub fn fit_normalization(train: &[&Episode], cfg: &TrainConfig) -> Result<NormalizationMeta> {
    let b = fit_pose_bounds(train, cfg.loss.horizon, cfg.model.frames, cfg.ranges())?;
    Ok(NormalizationMeta::default().with_pose_bounds(b[0], b[1], b[2]))
}

fn mean_terms(acc: &[LossTerms]) -> LossTerms {
    let n = acc.len().max(1) as f64;
    let mut m = LossTerms {
        recon: 0.0,
        linear: 0.0,
        multistep: 0.0,
        l2: 0.0,
        total: 0.0,
    };
    for t in acc {
        m.recon += t.recon / n;
        m.linear += t.linear / n;
        m.multistep += t.multistep / n;
        m.l2 += t.l2 / n;
        m.total += t.total / n;
    }
    m
}

fn validation_loss(model: &LatentModel, batches: &[SequenceBatch], cfg: &TrainConfig) -> Result<f64> {
    let w = cfg.weights();
    let mut sum = 0.0;
    for b in batches {
        sum += loss_terms(model, b, &w)?.total;
    }
    Ok(sum / batches.len() as f64)
}

/// Trains on the dataset's training split, validating on its validation
/// split (or the training split when there is none). `on_epoch` sees every
/// log row together with the best model so far.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &LatentModel),
) -> Result<TrainOutcome> {
    cfg.validate().map_err(DdkError::InvalidInput)?;
    let started = Instant::now();
    let train_eps = dataset.split_vec(Split::Train);
    let mut val_eps = dataset.split_vec(Split::Val);
    if val_eps.is_empty() {
        log::warn!("no validation episodes; validating on the training split");
        val_eps = train_eps.clone();
    }
    let (p, c) = (cfg.loss.horizon, cfg.model.frames);
    let train_sampler = WindowSampler::new(&train_eps, p, c)?;
    let val_sampler = WindowSampler::new(&val_eps, p, c)?;
    let norm = fit_normalization(&train_eps, cfg)?;
    let ranges = cfg.ranges();
    let weights = cfg.weights();

    let mut rng = rng_from_seed(cfg.optim.seed);
    let mut model = LatentModel::random(cfg.shape(), norm.clone(), &mut rng)?;
    let mut val_rng = rng_from_seed(cfg.optim.seed ^ 0x9e37_79b9_7f4a_7c15);
    let val_batches: Vec<SequenceBatch> = (0..cfg.validation.batches.max(1))
        .map(|_| val_sampler.sample(cfg.optim.batch_size, ranges, &norm, &mut val_rng))
        .collect();

    let initial_val = validation_loss(&model, &val_batches, cfg)?;
    let probe = train_sampler.sample(cfg.optim.batch_size, ranges, &norm, &mut rng);
    let first = EpochRecord {
        epoch: 0,
        train: loss_terms(&model, &probe, &weights)?,
        val_loss: initial_val,
        spectral_radius: model.spectrum.spectral_radius(),
    };
    on_epoch(&first, &model);
    let mut log = vec![first];
    let limit = cfg.optim.divergence_factor * initial_val;

    let mut best = model.clone();
    let mut best_val = initial_val;
    let mut best_epoch = 0;
    let mut theta = model.flatten();
    let mut adam = AdamState::new(theta.len(), cfg.optim.learning_rate);
    let mut steps = 0u64;

    for epoch in 1..=cfg.optim.epochs {
        let mut acc = Vec::with_capacity(cfg.optim.steps_per_epoch);
        for _ in 0..cfg.optim.steps_per_epoch {
            let batch = train_sampler.sample(cfg.optim.batch_size, ranges, &norm, &mut rng);
            let (terms, grad) = loss_and_gradient(&model, &batch, &weights)?;
            adam.update(&mut theta, &grad)?;
            model.set_flat(&theta)?;
            acc.push(terms);
            steps += 1;
        }
        let val_loss = validation_loss(&model, &val_batches, cfg)?;
        let rec = EpochRecord {
            epoch,
            train: mean_terms(&acc),
            val_loss,
            spectral_radius: model.spectrum.spectral_radius(),
        };
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        log::info!(
            "epoch {epoch}: L {:.5} val {:.5} rho {:.4}",
            rec.train.total,
            val_loss,
            rec.spectral_radius
        );
        on_epoch(&rec, &best);
        log.push(rec);
        if !(val_loss <= limit) {
            return Err(DdkError::Diverged { epoch, val_loss, limit });
        }
    }

    let info = TrainingInfo {
        config_hash: cfg.hash(),
        dataset_hash: dataset.content_hash(),
        seed: cfg.optim.seed,
        steps,
        epochs: cfg.optim.epochs,
        best_epoch,
        best_val_loss: best_val,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model: best, log, info })
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| DdkError::io(path, e))?;
    let mut text = String::from(TRAIN_LOG_HEADER);
    text.push('\n');
    for r in log {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| DdkError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::dataset::collect_episodes;

    fn small_dataset() -> Dataset {
        collect_episodes(5, (300, 400), 0.01, 11).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = small_dataset();
        let mut cfg = TrainConfig::smoke();
        cfg.optim.epochs = 0;
        let out = train(&ds, &cfg, |_, _| {}).unwrap();
        let norm = fit_normalization(&ds.split_vec(Split::Train), &cfg).unwrap();
        let init = LatentModel::random(cfg.shape(), norm, &mut rng_from_seed(cfg.optim.seed)).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.info.steps, 0);
    }

    #[test]
    fn short_run_is_deterministic_and_logs_each_epoch() {
        let ds = small_dataset();
        let mut cfg = TrainConfig::smoke();
        cfg.optim.epochs = 2;
        cfg.optim.steps_per_epoch = 2;
        cfg.optim.batch_size = 8;
        let mut seen = 0;
        let a = train(&ds, &cfg, |_, _| seen += 1).unwrap();
        let b = train(&ds, &cfg, |_, _| {}).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(a.model.flatten(), b.model.flatten());
        assert_eq!(a.log, b.log);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_train_log(&path, &a.log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(TRAIN_LOG_HEADER));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn divergence_aborts() {
        let ds = small_dataset();
        let mut cfg = TrainConfig::smoke();
        cfg.optim.epochs = 1;
        cfg.optim.steps_per_epoch = 1;
        cfg.optim.batch_size = 4;
        cfg.optim.divergence_factor = 1e-9;
        assert!(matches!(train(&ds, &cfg, |_, _| {}), Err(DdkError::Diverged { .. })));
    }
}
