//! Runs every `(cell, seed)` of an experiment, writes one metrics CSV per
//! run and a `summary.csv` across runs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{variance_report, LabeledLog, ReportOptions, StrategySummary};
use crate::config::{DatasetSource, ExperimentSpec};
use crate::data::{load_idx, synth_dataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{format_real, parse_csv, write_csv};
use crate::trainer::train;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str =
    "label,runs,iterations,final_loss_mean,final_loss_std,final_var_mean,iters_to_threshold,median_run_iters_to_threshold";

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub path: PathBuf,
    pub iterations_completed: u64,
    /// Abort reason, if the run stopped early.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunOutcome>,
    pub summary_path: PathBuf,
    pub summaries: Vec<StrategySummary>,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.error.is_none())
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Idx { images, labels } => load_idx(images, labels),
        DatasetSource::Synthetic { seed, blobs } => synth_dataset(blobs, *seed),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let dataset = load_dataset(&spec.dataset)?;
    fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;

    let mut runs = Vec::new();
    let mut logs = Vec::new();
    for cell in &spec.cells {
        let label = cell.label();
        for &seed in &spec.seeds {
            let config = spec.run_config(cell, seed);
            let (log, error) = match train(&config, &dataset) {
                Ok(out) => (out.log, None),
                Err(abort) => (abort.log, Some(abort.error.to_string())),
            };
            let path = spec.output_dir.join(format!("{label}_seed{seed}.csv"));
            let mut buf = Vec::new();
            write_csv(&mut buf, &log, spec.timing).map_err(|e| Error::io(&path, e))?;
            write_file(&path, &buf)?;
            runs.push(RunOutcome {
                path,
                iterations_completed: log.len() as u64,
                error,
            });
            if !log.is_empty() {
                logs.push(LabeledLog {
                    label: label.clone(),
                    records: log,
                });
            }
        }
    }

    let summary_path = spec.output_dir.join(SUMMARY_FILE);
    let summaries = if logs.is_empty() {
        Vec::new()
    } else {
        // aborted runs are shorter; summarize each label over the shared prefix
        variance_report(&logs, &spec.report)?
    };
    write_file(&summary_path, summary_csv(&summaries).as_bytes())?;
    Ok(ExperimentOutcome {
        runs,
        summary_path,
        summaries,
    })
}

pub fn summary_csv(summaries: &[StrategySummary]) -> String {
    let opt = |x: Option<f64>| x.map(format_real).unwrap_or_default();
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.label,
            s.runs,
            s.iterations.last().copied().unwrap_or(0),
            opt(s.final_loss_mean()),
            opt(s.final_loss_std()),
            opt(s.final_var_mean()),
            s.iterations_to_threshold
                .map(|i| i.to_string())
                .unwrap_or_default(),
            opt(s.median_run_iterations_to_threshold),
        ));
    }
    out
}

/// Label of a run CSV: its file stem without the trailing `_seed<N>`.
fn run_label(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    if !stem.starts_with("run_") || path.extension()? != "csv" {
        return None;
    }
    let (label, seed) = stem.rsplit_once("_seed")?;
    seed.parse::<u64>().ok()?;
    Some(label.to_string())
}

/// Re-summarizes every run CSV in `dir` into `dir/summary.csv`.
pub fn analyze_dir(dir: &Path, options: &ReportOptions) -> Result<Vec<StrategySummary>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| run_label(p).is_some())
        .collect();
    paths.sort();
    let mut logs = Vec::with_capacity(paths.len());
    for path in &paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = parse_csv(&text)?;
        if records.is_empty() {
            continue;
        }
        logs.push(LabeledLog {
            label: run_label(path).expect("filtered above"),
            records,
        });
    }
    let summaries = variance_report(&logs, options)?;
    write_file(&dir.join(SUMMARY_FILE), summary_csv(&summaries).as_bytes())?;
    Ok(summaries)
}
