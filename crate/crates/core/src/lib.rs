//! Deterministic training with loss-based importance sampling.
//!
//! Each iteration draws a pool of `2B` candidates uniformly, scores them
//! (true loss, gradient norm, or a learned loss predictor), samples a batch
//! of `B` with probability proportional to the smoothed scores, and corrects
//! each sampled gradient by `1 / (n p^k)`. With `k = 1` the update is an
//! unbiased estimate of the pool gradient; with `k < 1` it follows the
//! gradient of `Σ L^(2-k)`, tilting training towards high-loss samples.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod history;
pub mod metrics;
pub mod nn;
pub mod sampling;
pub mod trainer;

pub use analysis::{spearman, tracking_coefficients, TrackingFit};
pub use config::{parse_config, ExperimentSpec};
pub use data::{synth_dataset, Dataset, SynthSpec};
pub use error::{Error, Result};
pub use experiment::{analyze_dir, run_experiment};
pub use metrics::MetricsRecord;
pub use sampling::{
    biased_weights, build_distribution, presample_pool, sample_batch, BiasExponent,
};
pub use trainer::{train, Smoothing, Strategy, TrainConfig, Trainer};
