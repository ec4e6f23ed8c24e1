//! Episodes, datasets, and their CSV/JSON on-disk form.

use std::fs::{self, File};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::excite::Exciter;
use super::vehicle::{rollout, Control, VehicleState};
use crate::error::{DdkError, Result};
use crate::util::{rng_from_seed, sha256_hex};

pub const EPISODE_HEADER: [&str; 9] = ["t", "x", "y", "psi", "vx", "vy", "r", "swa", "engine"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Synchronized state/control rows sampled every `dt` seconds. Row `k`
/// holds the state at `t_k` and the control applied over `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub dt: f64,
    pub states: Vec<VehicleState>,
    pub controls: Vec<Control>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Raw row in recorded units: `[x, y, psi, vx, vy, r, swa, engine]`,
    /// engine as throttle opening / negated brake pressure.
    pub fn raw_row(&self, k: usize) -> [f64; 8] {
        let s = &self.states[k];
        let u = &self.controls[k];
        [s.x, s.y, s.psi, s.vx, s.vy, s.r, u.swa, u.engine_physical()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dt: f64,
    pub seed: u64,
    pub episodes: Vec<Episode>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> impl Iterator<Item = &Episode> {
        self.episodes
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(e, _)| e)
    }

    pub fn split_vec(&self, which: Split) -> Vec<&Episode> {
        self.split(which).collect()
    }

    /// Content hash over all rows and split markers.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.dt.to_le_bytes());
        for (ep, split) in self.episodes.iter().zip(&self.splits) {
            bytes.push(*split as u8);
            for k in 0..ep.len() {
                for v in ep.raw_row(k) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        sha256_hex(&bytes)
    }
}

/// Train/val/test counts: one eighth each for validation and test (at least
/// one each once there are three episodes), the rest for training.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let held = ((n as f64) / 8.0).round().max(1.0) as usize;
    (n - 2 * held, held, held)
}

/// Simulates `n_episodes` excitation-driven episodes with lengths drawn
/// uniformly from `steps` (inclusive) and assigns a shuffled split.
pub fn collect_episodes(n_episodes: usize, steps: (usize, usize), dt: f64, seed: u64) -> Result<Dataset> {
    collect_episodes_with(
        &Exciter {
            dt,
            ..Exciter::default()
        },
        n_episodes,
        steps,
        seed,
    )
}

pub fn collect_episodes_with(
    exciter: &Exciter,
    n_episodes: usize,
    steps: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(DdkError::InvalidInput("need at least one episode".into()));
    }
    if steps.0 == 0 || steps.0 > steps.1 {
        return Err(DdkError::InvalidInput(format!("bad episode length range {:?}", steps)));
    }
    let dt = exciter.dt;
    let mut rng = rng_from_seed(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let len = rng.gen_range(steps.0..=steps.1);
        let ep_seed: u64 = rng.gen();
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let init = VehicleState::new(0.0, 0.0, heading, 0.0, 0.0, 0.0);
        let controls = exciter.generate(&init, len, ep_seed);
        let mut states = Vec::with_capacity(len);
        states.push(init);
        if len > 1 {
            states.extend(rollout(&exciter.params, &init, &controls[..len - 1], dt)?);
        }
        episodes.push(Episode { dt, states, controls });
    }

    let (_, n_val, n_test) = split_counts(n_episodes);
    let mut order: Vec<usize> = (0..n_episodes).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; n_episodes];
    for &i in &order[..n_val] {
        splits[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        splits[i] = Split::Test;
    }
    Ok(Dataset {
        dt,
        seed,
        episodes,
        splits,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dt: f64,
    pub seed: u64,
    pub episodes: Vec<ManifestEntry>,
}

pub fn write_episode_csv(path: &Path, ep: &Episode) -> Result<()> {
    let file = File::create(path).map_err(|e| DdkError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| DdkError::parse(path, e);
    w.write_record(EPISODE_HEADER).map_err(csv_err)?;
    for k in 0..ep.len() {
        let row = ep.raw_row(k);
        let t = k as f64 * ep.dt;
        let mut rec = Vec::with_capacity(9);
        rec.push(format!("{t}"));
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DdkError::io(path, e))?;
    Ok(())
}

/// Reads an episode CSV; `dt` is taken from the first two time stamps.
pub fn read_episode_csv(path: &Path) -> Result<Episode> {
    let file = File::open(path).map_err(|e| DdkError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| DdkError::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != EPISODE_HEADER {
        return Err(DdkError::parse(path, format!("unexpected header {:?}", headers)));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| DdkError::parse(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| DdkError::parse(path, format!("row {}: {e}", i + 1)))?;
        if vals.len() != 9 {
            return Err(DdkError::parse(
                path,
                format!("row {} has {} fields", i + 1, vals.len()),
            ));
        }
        times.push(vals[0]);
        states.push(VehicleState::new(vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]));
        controls.push(Control::from_physical(vals[7], vals[8]));
    }
    let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.01 };
    Ok(Episode { dt, states, controls })
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DdkError::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.episodes.len());
    for (i, (ep, split)) in ds.episodes.iter().zip(&ds.splits).enumerate() {
        let file = format!("episode_{i:03}.csv");
        write_episode_csv(&dir.join(&file), ep)?;
        entries.push(ManifestEntry {
            file,
            split: *split,
            rows: ep.len(),
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        dt: ds.dt,
        seed: ds.seed,
        episodes: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DdkError::parse(&path, e))?;
    fs::write(&path, text).map_err(|e| DdkError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DdkError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| DdkError::parse(&path, e))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(DdkError::parse(
            &path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let mut episodes = Vec::new();
    let mut splits = Vec::new();
    for entry in &manifest.episodes {
        let mut ep = read_episode_csv(&dir.join(&entry.file))?;
        ep.dt = manifest.dt;
        episodes.push(ep);
        splits.push(entry.split);
    }
    Ok(Dataset {
        dt: manifest.dt,
        seed: manifest.seed,
        episodes,
        splits,
    })
}
