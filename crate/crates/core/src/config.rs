//! TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analysis::ReportOptions;
use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::trainer::{Smoothing, Strategy, TrainConfig};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "ISAMPLE_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    /// Gaussian blobs; `blobs` holds the generator parameters.
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        blobs: SynthSpec,
    },
}

/// One point of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub strategy: Strategy,
    pub k: f64,
    pub smoothing: Smoothing,
}

impl Cell {
    /// File-name stem shared by every seed of this cell.
    pub fn label(&self) -> String {
        format!("run_{}_k{}_c{}", self.strategy, self.k, self.smoothing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Write wall-clock times into the run CSVs (makes them non-reproducible).
    pub timing: bool,
    pub report: ReportOptions,
}

impl ExperimentSpec {
    pub fn apply_env_overrides(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    /// Training configuration for one `(cell, seed)` run.
    pub fn run_config(&self, cell: &Cell, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy: cell.strategy,
            k: cell.k,
            smoothing: cell.smoothing,
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    dataset: DatasetSource,
    strategy: Option<Strategy>,
    #[serde(default)]
    cells: Vec<RawCell>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    timing: bool,
    #[serde(default)]
    report: RawReport,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    strategy: Strategy,
    k: Option<f64>,
    smoothing: Option<Smoothing>,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawReport {
    window: usize,
    loss_threshold: f64,
}

impl Default for RawReport {
    fn default() -> Self {
        let d = ReportOptions::default();
        RawReport {
            window: d.window,
            loss_threshold: d.loss_threshold,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses configuration text. Relative dataset paths are resolved against
/// `base_dir`.
pub fn parse_config_str(text: &str, origin: &Path, base_dir: &Path) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let cells: Vec<Cell> = match (raw.strategy, raw.cells.is_empty()) {
        (Some(_), false) => {
            return Err(Error::config(
                "strategy",
                "give either `strategy` or `[[cells]]`, not both",
            ))
        }
        (Some(strategy), true) => vec![Cell {
            strategy,
            k: raw.train.k,
            smoothing: raw.train.smoothing,
        }],
        (None, true) => {
            return Err(Error::config(
                "cells",
                "at least one cell (or `strategy`) is required",
            ))
        }
        (None, false) => raw
            .cells
            .iter()
            .map(|c| Cell {
                strategy: c.strategy,
                k: c.k.unwrap_or(raw.train.k),
                smoothing: c.smoothing.unwrap_or(raw.train.smoothing),
            })
            .collect(),
    };
    for (i, cell) in cells.iter().enumerate() {
        if !(cell.k.is_finite() && cell.k <= 1.0) {
            return Err(Error::config(
                format!("cells[{i}].k"),
                format!(
                    "k = {} violates k <= 1 for the correction weights 1/(n p^k)",
                    cell.k
                ),
            ));
        }
    }
    if raw.seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    raw.train
        .validate()
        .map_err(|(key, m)| Error::config(format!("train.{key}"), m))?;
    if raw.report.window == 0 {
        return Err(Error::config("report.window", "must be >= 1"));
    }

    let dataset = match raw.dataset {
        DatasetSource::Idx { images, labels } => DatasetSource::Idx {
            images: base_dir.join(images),
            labels: base_dir.join(labels),
        },
        DatasetSource::Synthetic { seed, blobs } => {
            blobs
                .validate()
                .map_err(|m| Error::config("dataset.blobs", m))?;
            DatasetSource::Synthetic { seed, blobs }
        }
    };

    Ok(ExperimentSpec {
        dataset,
        cells,
        seeds: raw.seeds,
        train: raw.train,
        output_dir: raw.output_dir,
        timing: raw.timing,
        report: ReportOptions {
            window: raw.report.window,
            loss_threshold: raw.report.loss_threshold,
        },
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, path, base)
}

/// Parses a standalone `[train]` table body (the keys of [`TrainConfig`]).
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let config: TrainConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            path: PathBuf::from("<train config>"),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    config
        .validate()
        .map_err(|(key, m)| Error::config(key, m))?;
    Ok(config)
}

/// Commented configuration listing every key with its default.
pub const DEFAULT_CONFIG: &str = r#"# isample experiment configuration

# Where run CSVs and summary.csv are written (overridden by ISAMPLE_OUTPUT_DIR).
output_dir = "runs"
# One run per (cell, seed).
seeds = [0, 1, 2]
# Write wall-clock milliseconds into the CSVs. Off by default so reruns are
# byte-identical.
timing = false

[dataset]
# "synthetic" or "idx". For idx give `images` and `labels` paths, relative to
# this file.
source = "synthetic"
seed = 0

[dataset.blobs]
n = 1024
dims = 2
classes = 2
radius = 2.0
noise = 0.5
# Fraction of each class moved to a rare cluster beyond the next class.
hard_fraction = 0.05
hard_scale = 1.75
hard_noise = 0.15
# Relative class frequencies, equal when empty.
proportions = []

# Strategies: uniform, loss, gnorm, approx. `k` and `smoothing` default to the
# values under [train].
[[cells]]
strategy = "uniform"
k = 1.0

[[cells]]
strategy = "loss"
k = 0.5
smoothing = "adaptive"

[train]
# Bias exponent of the correction weights 1/(n p^k); must be <= 1.
k = 0.5
batch_size = 32
# Pool size = pool_factor * batch_size.
pool_factor = 2.0
# "adaptive" (half the running mean loss) or a constant such as 0.5, 1, 2.5.
smoothing = "adaptive"
ema_decay = 0.99
iterations = 1000
# Full-dataset max-loss sweep period; 0 disables.
max_loss_sweep_interval = 300
seed = 0
# "pool" or "dataset".
weight_normalizer = "pool"
hidden_layers = [16]
dropout = 0.0
# Loss-history window and loss-predictor sizes.
history_window = 10
approx_hidden = 32
approx_embed = 32
# Optional single step decay of the learning rate.
# lr_decay_at = 5000
lr_decay_factor = 0.1

[train.optimizer]
kind = "adam"
learning_rate = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8

# Optimizer of the loss predictor; defaults to [train.optimizer].
# [train.approx_optimizer]
# kind = "adam"
# learning_rate = 0.001

[report]
# Moving-window length and loss threshold for summary.csv.
window = 50
loss_threshold = 0.1
"#;
