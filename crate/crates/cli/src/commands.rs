use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use ddk::eval::{rmse_prediction, tracking_errors, PredictionReport, TrackingReport, REPORT_FORMAT_VERSION};
use ddk::koopman::checkpoint::load_model;
use ddk::koopman::{Checkpoint, TrainingInfo};
use ddk::mpc::{track as run_tracking, track_with, MpcConfig, PurePursuit, TrackingLog};
use ddk::sim::dataset::{collect_episodes, load_dataset, save_dataset, Split};
use ddk::sim::reference::{ReferenceDriver, ReferenceTrajectory};
use ddk::sim::vehicle::VehicleParams;
use ddk::train::{train as run_training, TrainConfig, TRAIN_LOG_HEADER};
use ddk::util::sha256_hex;
use ddk::{DdkError, Result};

#[derive(Args, Debug)]
pub struct SimCollectArgs {
    #[arg(long)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Shortest episode, in samples.
    #[arg(long, default_value_t = 1000)]
    pub min_steps: usize,
    /// Longest episode, in samples.
    #[arg(long, default_value_t = 4000)]
    pub max_steps: usize,
    /// Sample time in seconds.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
}

pub fn sim_collect(a: SimCollectArgs) -> Result<()> {
    let ds = collect_episodes(a.episodes, (a.min_steps, a.max_steps), a.dt, a.seed)?;
    save_dataset(&a.out, &ds)?;
    log::info!("wrote {} episodes to {}", ds.episodes.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training-log CSV; defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig::load(&a.config)?;
    let ds = load_dataset(&a.data)?;
    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, ".log.csv"));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DdkError::io(dir, e))?;
    }
    let mut log_file = fs::File::create(&log_path).map_err(|e| DdkError::io(&log_path, e))?;
    writeln!(log_file, "{TRAIN_LOG_HEADER}").map_err(|e| DdkError::io(&log_path, e))?;

    let partial = sibling(&a.out, ".partial");
    let mut io_error = None;
    let mut best_seen = f64::INFINITY;
    let outcome = run_training(&ds, &cfg, |rec, best| {
        if let Err(e) = writeln!(log_file, "{}", rec.csv_row()).and_then(|_| log_file.flush()) {
            io_error.get_or_insert(DdkError::io(&log_path, e));
        }
        // Keep the best model on disk while a long run is in progress.
        if rec.val_loss < best_seen {
            best_seen = rec.val_loss;
            let info = TrainingInfo {
                config_hash: cfg.hash(),
                dataset_hash: String::new(),
                seed: cfg.optim.seed,
                best_epoch: rec.epoch,
                best_val_loss: rec.val_loss,
                ..TrainingInfo::default()
            };
            if let Err(e) = Checkpoint::from_model(best, info).save(&partial) {
                io_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    Checkpoint::from_model(&outcome.model, outcome.info.clone()).save(&a.out)?;
    let _ = fs::remove_file(&partial);
    log::info!(
        "best validation loss {:.6} at epoch {} after {} steps ({:.0} s)",
        outcome.info.best_val_loss,
        outcome.info.best_epoch,
        outcome.info.steps,
        outcome.info.seconds
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 120)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DdkError::parse(path, e))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DdkError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| DdkError::io(path, e))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let (model, ckpt, hash) = load_model(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let episodes = ds.split_vec(a.split.into());
    if episodes.is_empty() {
        return Err(DdkError::InvalidInput(format!("dataset has no {:?} episodes", a.split)));
    }
    let mut report = rmse_prediction(&model, &episodes, a.horizon)?;
    report.config_hash = ckpt.info.config_hash.clone();
    report.checkpoint_hash = hash;
    write_json(&a.out, &report)?;
    let r = &report.rmse;
    log::info!(
        "{}-step RMSE over {} windows: x {:.4} y {:.4} psi {:.4} vx {:.4} vy {:.4} r {:.4}",
        a.horizon,
        report.windows,
        r[0],
        r[1],
        r[2],
        r[3],
        r[4],
        r[5]
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimReferenceArgs {
    /// Reference length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub seconds: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sim_reference(a: SimReferenceArgs) -> Result<()> {
    let driver = ReferenceDriver::default();
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        return Err(DdkError::InvalidInput("--seconds must be positive".into()));
    }
    let steps = (a.seconds / driver.dt).round() as usize;
    let reference = driver.generate(steps, a.seed)?;
    reference.write_csv(&a.out)?;
    log::info!("wrote {} reference samples to {}", reference.len(), a.out.display());
    Ok(())
}

fn report_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| sibling(out, ".json"))
}

fn log_tracking(report: &TrackingReport) {
    log::info!(
        "{}: {} steps, P2P mean {:.3} max {:.3} m, lateral mean {:.3} max {:.3} m, solve {:.2} ms{}",
        report.controller,
        report.steps,
        report.p2p.mean,
        report.p2p.max,
        report.lateral.mean,
        report.lateral.max,
        report.solve_ms.mean,
        if report.diverged { " (diverged)" } else { "" }
    );
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub np: usize,
    #[arg(long, default_value_t = 30)]
    pub nc: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Tracking-error report; defaults to the log path with `.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn track(a: TrackArgs) -> Result<()> {
    let (model, _, hash) = load_model(&a.ckpt)?;
    let reference = ReferenceTrajectory::read_csv(&a.reference)?;
    let cfg = MpcConfig::with_horizons(a.np, a.nc);
    let log = run_tracking(&model, &VehicleParams::default(), &reference, &cfg)?;
    log.write_csv(&a.out)?;
    let mut report = tracking_errors(&log, "ddk-mpc")?;
    report.config_hash = cfg.hash();
    report.checkpoint_hash = hash;
    write_json(&report_path(&a.out, a.report), &report)?;
    log_tracking(&report);
    Ok(())
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Preview gain; preview distance is `kd · vref`.
    #[arg(long, default_value_t = 0.2)]
    pub kd: f64,
    /// Target speed in m/s.
    #[arg(long, default_value_t = 7.0)]
    pub vref: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn baseline_pp(a: BaselineArgs) -> Result<()> {
    let reference = ReferenceTrajectory::read_csv(&a.reference)?;
    let params = VehicleParams::default();
    let mut pp = PurePursuit::new(reference.states.clone(), a.kd, a.vref, &params)?;
    let log = track_with(&mut pp, &params, &reference, 1, 1)?;
    log.write_csv(&a.out)?;
    let mut report = tracking_errors(&log, "pure-pursuit")?;
    report.config_hash = sha256_hex(format!("kd={} vref={}", a.kd, a.vref).as_bytes());
    write_json(&report_path(&a.out, a.report), &report)?;
    log_tracking(&report);
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Prediction or tracking JSON reports, or tracking-log CSVs.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Merged JSON summary; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, serde::Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Entry {
    Prediction { source: String, report: PredictionReport },
    Tracking { source: String, report: TrackingReport },
}

#[derive(Debug, serde::Serialize)]
struct MergedReport {
    format_version: u32,
    entries: Vec<Entry>,
}

fn read_entry(path: &Path) -> Result<Entry> {
    let source = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let log = TrackingLog::read_csv(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let report = tracking_errors(&log, &name)?;
        return Ok(Entry::Tracking { source, report });
    }
    let text = fs::read_to_string(path).map_err(|e| DdkError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DdkError::parse(path, e))?;
    if value.get("rmse").is_some() {
        let report = serde_json::from_value(value).map_err(|e| DdkError::parse(path, e))?;
        Ok(Entry::Prediction { source, report })
    } else if value.get("p2p").is_some() {
        let report = serde_json::from_value(value).map_err(|e| DdkError::parse(path, e))?;
        Ok(Entry::Tracking { source, report })
    } else {
        Err(DdkError::parse(path, "not a prediction or tracking report"))
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let entries = a.inputs.iter().map(|p| read_entry(p)).collect::<Result<Vec<_>>>()?;
    for e in &entries {
        match e {
            Entry::Prediction { source, report } => log::info!(
                "{source}: {}-step RMSE x {:.4} y {:.4} psi {:.4} vx {:.4} vy {:.4} r {:.4}",
                report.horizon,
                report.rmse[0],
                report.rmse[1],
                report.rmse[2],
                report.rmse[3],
                report.rmse[4],
                report.rmse[5]
            ),
            Entry::Tracking { report, .. } => log_tracking(report),
        }
    }
    let merged = MergedReport {
        format_version: REPORT_FORMAT_VERSION,
        entries,
    };
    match a.out {
        Some(path) => write_json(&path, &merged),
        None => {
            let text = serde_json::to_string_pretty(&merged).map_err(|e| DdkError::InvalidInput(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}
