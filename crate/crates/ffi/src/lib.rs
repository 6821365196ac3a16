//! C ABI over `isample`.
//!
//! Every function returns an [`IsStatus`]; on failure the message is
//! available from [`is_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary; they are reported as `IS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use isample::analysis::tracking_coefficients;
use isample::config::{parse_config, parse_train_config};
use isample::data::{load_idx, synth_dataset, Dataset, SynthSpec};
use isample::experiment::run_experiment;
use isample::metrics::MetricsRecord;
use isample::sampling::{biased_weights, build_distribution, BiasExponent};
use isample::trainer::{TrainConfig, Trainer};
use isample::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Degenerate = 5,
    Io = 6,
    Format = 7,
    Config = 8,
    Diverged = 9,
    Panic = 10,
}

fn status_of(e: &Error) -> IsStatus {
    match e {
        Error::Shape { .. } | Error::Index { .. } | Error::CountMismatch { .. } => IsStatus::Shape,
        Error::NonFinite { .. } | Error::NonFiniteInput { .. } => IsStatus::NonFinite,
        Error::DegenerateDistribution
        | Error::ZeroProbability { .. }
        | Error::UndefinedVariance { .. } => IsStatus::Degenerate,
        Error::Io { .. } => IsStatus::Io,
        Error::Magic { .. } | Error::Truncated { .. } | Error::Checkpoint(_) => IsStatus::Format,
        Error::Parse { .. } | Error::Config { .. } => IsStatus::Config,
        Error::Diverged { .. } => IsStatus::Diverged,
        _ => IsStatus::InvalidArgument,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).expect("nul bytes removed"));
}

struct Failure(IsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            IsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            IsStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn str_in<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        Failure(
            IsStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next `is_*` call on this thread.
#[no_mangle]
pub extern "C" fn is_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque dataset handle.
pub struct IsDataset {
    inner: Dataset,
}

/// Gaussian-blob classification set; `hard_fraction` of each class is moved
/// to a rare cluster.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_synthetic(
    n: usize,
    dims: usize,
    classes: usize,
    noise: f64,
    hard_fraction: f64,
    seed: u64,
    out: *mut *mut IsDataset,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = SynthSpec {
            n,
            dims,
            classes,
            noise,
            hard_fraction,
            ..SynthSpec::default()
        };
        let inner = synth_dataset(&spec, seed)?;
        *out = Box::into_raw(Box::new(IsDataset { inner }));
        Ok(())
    })
}

/// Loads an IDX image/label pair.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_from_idx(
    images_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut IsDataset,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let images = PathBuf::from(str_in(images_path, "images_path")?);
        let labels = PathBuf::from(str_in(labels_path, "labels_path")?);
        let inner = load_idx(&images, &labels)?;
        *out = Box::into_raw(Box::new(IsDataset { inner }));
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_len(dataset: *const IsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_free(dataset: *mut IsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Opaque trainer handle. It owns a copy of its dataset, so the dataset
/// handle may be freed independently.
pub struct IsTrainer {
    // declared first so it is dropped before the dataset it borrows
    trainer: Trainer<'static>,
    _dataset: Box<Dataset>,
}

/// One iteration's metrics. Absent optional values are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct IsStepMetrics {
    pub iteration: u64,
    pub epoch: f64,
    pub batch_loss: f64,
    pub ema_loss: f64,
    pub var_trace: f64,
    pub max_loss: f64,
    pub tracking_a: f64,
    pub tracking_b: f64,
    pub smoothing_c: f64,
}

impl From<&MetricsRecord> for IsStepMetrics {
    fn from(r: &MetricsRecord) -> Self {
        IsStepMetrics {
            iteration: r.iteration,
            epoch: r.epoch,
            batch_loss: r.batch_loss,
            ema_loss: r.ema_loss,
            var_trace: r.var_trace.unwrap_or(f64::NAN),
            max_loss: r.max_loss.unwrap_or(f64::NAN),
            tracking_a: r.tracking.map_or(f64::NAN, |t| t.a),
            tracking_b: r.tracking.map_or(f64::NAN, |t| t.b),
            smoothing_c: r.smoothing_c,
        }
    }
}

/// Creates a trainer. `config_toml` holds training keys such as
/// `strategy = "loss"` and `k = 0.5`; null means all defaults.
///
/// # Safety
/// `dataset` must be a live handle, `config_toml` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_trainer_new(
    dataset: *const IsDataset,
    config_toml: *const c_char,
    out: *mut *mut IsTrainer,
) -> IsStatus {
    guard(|| {
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_toml.is_null() {
            TrainConfig::default()
        } else {
            parse_train_config(str_in(config_toml, "config_toml")?)?
        };
        let owned = Box::new(dataset.inner.clone());
        // SAFETY: the boxed dataset never moves and outlives `trainer`
        // (field order in `IsTrainer`).
        let borrowed: &'static Dataset = &*(owned.as_ref() as *const Dataset);
        let trainer = Trainer::new(config, borrowed)?;
        *out = Box::into_raw(Box::new(IsTrainer {
            trainer,
            _dataset: owned,
        }));
        Ok(())
    })
}

/// Runs one iteration. `metrics` may be null.
///
/// # Safety
/// `trainer` must be a live handle; `metrics` null or writable.
#[no_mangle]
pub unsafe extern "C" fn is_trainer_step(
    trainer: *mut IsTrainer,
    metrics: *mut IsStepMetrics,
) -> IsStatus {
    guard(|| {
        let t = trainer.as_mut().ok_or_else(|| null("trainer"))?;
        let record = t.trainer.step()?;
        if let Some(m) = metrics.as_mut() {
            *m = IsStepMetrics::from(&record);
        }
        Ok(())
    })
}

/// Number of model parameters, 0 for a null handle.
///
/// # Safety
/// `trainer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn is_trainer_num_params(trainer: *const IsTrainer) -> usize {
    trainer
        .as_ref()
        .map_or(0, |t| t.trainer.params().num_params())
}

/// Copies the flat parameter vector into `out`, which must hold exactly
/// `is_trainer_num_params` values.
///
/// # Safety
/// `trainer` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn is_trainer_params(
    trainer: *const IsTrainer,
    out: *mut f64,
    len: usize,
) -> IsStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let values = t.trainer.params().values();
        if len != values.len() {
            return Err(Error::Shape {
                what: "parameter buffer",
                expected: values.len(),
                actual: len,
            }
            .into());
        }
        slice_out(out, len, "out")?.copy_from_slice(values);
        Ok(())
    })
}

/// # Safety
/// `trainer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn is_trainer_free(trainer: *mut IsTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Sampling probabilities `(s_i + c) / Σ_j (s_j + c)` over `n` scores.
///
/// # Safety
/// `scores` and `probs_out` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn is_importance_probs(
    scores: *const f64,
    n: usize,
    smoothing: f64,
    probs_out: *mut f64,
) -> IsStatus {
    guard(|| {
        let scores = slice_in(scores, n, "scores")?.to_vec();
        let dist = build_distribution((0..n).collect(), scores, smoothing)?;
        slice_out(probs_out, n, "probs_out")?.copy_from_slice(dist.probs());
        Ok(())
    })
}

/// Correction weights `1 / (n p^k)` for the pool positions in `chosen`.
///
/// # Safety
/// `scores` must be valid for `n`, `chosen` and `weights_out` for `m`.
#[no_mangle]
pub unsafe extern "C" fn is_biased_weights(
    scores: *const f64,
    n: usize,
    smoothing: f64,
    chosen: *const usize,
    m: usize,
    k: f64,
    weights_out: *mut f64,
) -> IsStatus {
    guard(|| {
        let scores = slice_in(scores, n, "scores")?.to_vec();
        let chosen = slice_in(chosen, m, "chosen")?;
        let dist = build_distribution((0..n).collect(), scores, smoothing)?;
        let weights = biased_weights(&dist, chosen, BiasExponent::new(k)?)?;
        slice_out(weights_out, m, "weights_out")?.copy_from_slice(&weights);
        Ok(())
    })
}

/// Least-squares fit `actual ≈ a · predicted + b`.
///
/// # Safety
/// Arrays must be valid for `n` elements; `a` and `b` writable.
#[no_mangle]
pub unsafe extern "C" fn is_tracking_coefficients(
    predicted: *const f64,
    actual: *const f64,
    n: usize,
    a: *mut f64,
    b: *mut f64,
) -> IsStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("a/b"));
        }
        let fit = tracking_coefficients(
            slice_in(predicted, n, "predicted")?,
            slice_in(actual, n, "actual")?,
        )?;
        *a = fit.a;
        *b = fit.b;
        Ok(())
    })
}

/// Runs a TOML experiment. `all_completed` (may be null) receives 1 when no
/// run aborted. Aborted runs do not make the call fail.
///
/// # Safety
/// `config_path` must be NUL-terminated; `all_completed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn is_run_experiment(
    config_path: *const c_char,
    all_completed: *mut i32,
) -> IsStatus {
    guard(|| {
        let path = PathBuf::from(str_in(config_path, "config_path")?);
        let mut spec = parse_config(&path)?;
        spec.apply_env_overrides();
        let outcome = run_experiment(&spec)?;
        if let Some(flag) = all_completed.as_mut() {
            *flag = i32::from(outcome.all_completed());
        }
        Ok(())
    })
}
