//! Mini-batch importance-sampled training.
//!
//! Every iteration draws a uniform pool of `pool_factor · B` samples, scores
//! it with the configured strategy, smooths the scores into a sampling
//! distribution, draws `B` samples with replacement, weights them with
//! `α = 1 / (n · p^k)` and takes an optimizer step. The `approx` strategy
//! additionally trains its loss predictor on the losses just observed, and
//! all strategies append those losses to the history.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::tracking_coefficients;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::history::{
    approx_train_step, predict_importance, ApproxParams, HistoryStore, TrainingObservation,
    DEFAULT_EMBED, DEFAULT_HIDDEN, DEFAULT_WINDOW,
};
use crate::metrics::MetricsRecord;
use crate::nn::{
    backward, per_sample_grad_norm, standard_layers, Example, MlpParams, OptimizerConfig,
    OptimizerState,
};
use crate::sampling::{
    adaptive_smoothing_constant, biased_weights_with_normalizer, build_distribution,
    presample_pool, sample_batch, BiasExponent, ImportanceDistribution,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Loss,
    Gnorm,
    Approx,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Loss => "loss",
            Strategy::Gnorm => "gnorm",
            Strategy::Approx => "approx",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Additive smoothing of importance scores: half the running mean loss, or
/// a fixed constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SmoothingRepr", into = "SmoothingRepr")]
pub enum Smoothing {
    Adaptive,
    Constant(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SmoothingRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<SmoothingRepr> for Smoothing {
    type Error = String;

    fn try_from(r: SmoothingRepr) -> std::result::Result<Self, String> {
        match r {
            SmoothingRepr::Name(s) if s == "adaptive" => Ok(Smoothing::Adaptive),
            SmoothingRepr::Name(s) => Err(format!(
                "unknown smoothing `{s}`, expected \"adaptive\" or a number"
            )),
            SmoothingRepr::Value(c) if c >= 0.0 && c.is_finite() => Ok(Smoothing::Constant(c)),
            SmoothingRepr::Value(c) => Err(format!("smoothing constant {c} must be >= 0")),
        }
    }
}

impl From<Smoothing> for SmoothingRepr {
    fn from(s: Smoothing) -> Self {
        match s {
            Smoothing::Adaptive => SmoothingRepr::Name("adaptive".into()),
            Smoothing::Constant(c) => SmoothingRepr::Value(c),
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothing::Adaptive => f.write_str("adaptive"),
            Smoothing::Constant(c) => write!(f, "{c}"),
        }
    }
}

/// What `n` divides the correction weights by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightNormalizer {
    Pool,
    Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub k: f64,
    pub batch_size: usize,
    pub pool_factor: f64,
    pub smoothing: Smoothing,
    pub ema_decay: f64,
    pub optimizer: OptimizerConfig,
    /// Optimizer of the loss predictor; the main optimizer when unset.
    pub approx_optimizer: Option<OptimizerConfig>,
    pub iterations: u64,
    /// Full-dataset max-loss sweep every this many iterations; 0 disables.
    pub max_loss_sweep_interval: u64,
    pub seed: u64,
    pub weight_normalizer: WeightNormalizer,
    pub hidden_layers: Vec<usize>,
    pub dropout: f64,
    pub history_window: usize,
    pub approx_hidden: usize,
    pub approx_embed: usize,
    /// Multiply the main learning rate by `lr_decay_factor` once this
    /// iteration has completed.
    pub lr_decay_at: Option<u64>,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Uniform,
            k: 0.5,
            batch_size: 32,
            pool_factor: 2.0,
            smoothing: Smoothing::Adaptive,
            ema_decay: 0.99,
            optimizer: OptimizerConfig::default(),
            approx_optimizer: None,
            iterations: 1000,
            max_loss_sweep_interval: 300,
            seed: 0,
            weight_normalizer: WeightNormalizer::Pool,
            hidden_layers: vec![16],
            dropout: 0.0,
            history_window: DEFAULT_WINDOW,
            approx_hidden: DEFAULT_HIDDEN,
            approx_embed: DEFAULT_EMBED,
            lr_decay_at: None,
            lr_decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn pool_size(&self) -> usize {
        (self.pool_factor * self.batch_size as f64).round() as usize
    }

    /// Checks every invariant; the error names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |k: &str, m: String| Err((k.to_string(), m));
        if self.batch_size < 1 {
            return fail("batch_size", "must be >= 1".into());
        }
        if !(self.pool_factor.is_finite() && self.pool_size() >= self.batch_size) {
            return fail(
                "pool_factor",
                format!(
                    "pool size {} must be >= batch size {}",
                    self.pool_size(),
                    self.batch_size
                ),
            );
        }
        if !(self.k.is_finite() && self.k <= 1.0) {
            return fail(
                "k",
                format!(
                    "k = {} violates k <= 1 for the correction weights 1/(n p^k)",
                    self.k
                ),
            );
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return fail(
                "ema_decay",
                format!("{} must lie in (0, 1)", self.ema_decay),
            );
        }
        if let Smoothing::Constant(c) = self.smoothing {
            if !(c >= 0.0 && c.is_finite()) {
                return fail("smoothing", format!("{c} must be >= 0"));
            }
        }
        if let Err(m) = self.optimizer.validate() {
            return fail("optimizer", m);
        }
        if let Some(o) = &self.approx_optimizer {
            if let Err(m) = o.validate() {
                return fail("approx_optimizer", m);
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", format!("{} must lie in [0, 1)", self.dropout));
        }
        if self.hidden_layers.contains(&0) {
            return fail("hidden_layers", "layer widths must be positive".into());
        }
        if self.history_window == 0 || self.approx_hidden == 0 || self.approx_embed == 0 {
            return fail(
                "history_window",
                "approximator sizes must be positive".into(),
            );
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return fail(
                "lr_decay_factor",
                format!("{} must be > 0", self.lr_decay_factor),
            );
        }
        Ok(())
    }
}

/// Exponential moving average of mini-batch losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmaTracker {
    value: Option<f64>,
    decay: f64,
}

impl EmaTracker {
    pub fn new(decay: f64) -> Self {
        EmaTracker { value: None, decay }
    }

    pub fn update(&mut self, observation: f64) -> f64 {
        let v = match self.value {
            None => observation,
            Some(v) => self.decay * v + (1.0 - self.decay) * observation,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

/// Trace of the empirical covariance of the given vectors: the mean squared
/// distance to their mean.
pub fn grad_variance_trace(vectors: &[Vec<f64>]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::UndefinedVariance {
            count: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::Shape {
            what: "gradient vectors",
            expected: dim,
            actual: v.len(),
        });
    }
    let m = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let total: f64 = vectors
        .iter()
        .map(|v| {
            v.iter()
                .zip(&mean)
                .map(|(x, a)| (x - a) * (x - a))
                .sum::<f64>()
        })
        .sum();
    Ok(total / m)
}

/// Per-sample evaluation-mode losses over the whole dataset.
pub fn dataset_losses(params: &MlpParams, dataset: &Dataset) -> Result<Vec<f64>> {
    (0..dataset.len())
        .map(|i| params.sample_loss(dataset.row(i), dataset.target(i)))
        .collect()
}

/// Largest per-sample training loss, dropout disabled.
pub fn max_loss_sweep(params: &MlpParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset_losses(params, dataset)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// The two random streams of a run: stream 0 initializes parameters,
/// stream 1 drives pools, mini-batches and dropout.
pub fn rng_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    train.set_stream(1);
    (init, train)
}

/// Builds the main model for `dataset` from the init stream.
pub fn init_model(
    config: &TrainConfig,
    dataset: &Dataset,
    init_rng: &mut ChaCha8Rng,
) -> Result<MlpParams> {
    let specs = standard_layers(
        dataset.dims(),
        &config.hidden_layers,
        dataset.output_dim(),
        config.dropout,
    );
    MlpParams::init(&specs, init_rng)
}

struct ApproxState {
    params: ApproxParams,
    optimizer: OptimizerState,
}

/// Owns all mutable state of one training run.
pub struct Trainer<'d> {
    config: TrainConfig,
    k: BiasExponent,
    dataset: &'d Dataset,
    params: MlpParams,
    optimizer: OptimizerState,
    approx: Option<ApproxState>,
    history: HistoryStore,
    ema: EmaTracker,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        config
            .validate()
            .map_err(|(key, message)| Error::config(key, message))?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = BiasExponent::new(config.k)?;
        let (mut init_rng, rng) = rng_streams(config.seed);
        let params = init_model(&config, dataset, &mut init_rng)?;
        let optimizer = config.optimizer.build(params.num_params());
        let approx = if config.strategy == Strategy::Approx {
            let p = ApproxParams::init(
                dataset.num_classes(),
                config.approx_hidden,
                config.approx_embed,
                &mut init_rng,
            )?;
            let opt = config
                .approx_optimizer
                .unwrap_or(config.optimizer)
                .build(p.num_params());
            Some(ApproxState {
                params: p,
                optimizer: opt,
            })
        } else {
            None
        };
        Ok(Trainer {
            history: HistoryStore::new(config.history_window),
            ema: EmaTracker::new(config.ema_decay),
            config,
            k,
            dataset,
            params,
            optimizer,
            approx,
            rng,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn approx_params(&self) -> Option<&ApproxParams> {
        self.approx.as_ref().map(|a| &a.params)
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    pub fn ema(&self) -> &EmaTracker {
        &self.ema
    }

    /// Number of completed parameter updates.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn smoothing_constant(&self) -> f64 {
        match self.config.smoothing {
            Smoothing::Adaptive => adaptive_smoothing_constant(self.ema.value().unwrap_or(0.0)),
            Smoothing::Constant(c) => c,
        }
    }

    fn score_pool(&self, pool: &[usize]) -> Result<(Vec<f64>, f64)> {
        let ds = self.dataset;
        let scores = match self.config.strategy {
            Strategy::Uniform => return Ok((vec![1.0; pool.len()], 0.0)),
            Strategy::Loss => pool
                .iter()
                .map(|&i| self.params.sample_loss(ds.row(i), ds.target(i)))
                .collect::<Result<Vec<_>>>()?,
            Strategy::Gnorm => pool
                .iter()
                .map(|&i| per_sample_grad_norm(&self.params, ds.row(i), ds.target(i)))
                .collect::<Result<Vec<_>>>()?,
            Strategy::Approx => {
                let approx = &self.approx.as_ref().expect("approx state exists").params;
                let ema = self.ema.value().unwrap_or(0.0);
                pool.iter()
                    .map(|&i| predict_importance(approx, i, ds.class_of(i), &self.history, ema))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok((scores, self.smoothing_constant()))
    }

    fn distribution(&self, pool: Vec<usize>) -> Result<ImportanceDistribution> {
        let (scores, c) = self.score_pool(&pool)?;
        match build_distribution(pool.clone(), scores.clone(), c) {
            // all scores zero and no smoothing yet: fall back to uniform
            Err(Error::DegenerateDistribution) => build_distribution(pool, scores, 1.0),
            other => other,
        }
    }

    /// Runs one iteration. Any failure is reported as [`Error::Diverged`]
    /// carrying the iteration number.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let iteration = self.iteration + 1;
        self.step_inner(iteration).map_err(|e| Error::Diverged {
            iteration,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, iteration: u64) -> Result<MetricsRecord> {
        let start = Instant::now();
        let ds = self.dataset;
        let b = self.config.batch_size;

        let pool = presample_pool(ds.len(), self.config.pool_size(), &mut self.rng)?;
        let dist = self.distribution(pool)?;
        let positions = sample_batch(&dist, b, &mut self.rng)?;
        let normalizer = match self.config.weight_normalizer {
            WeightNormalizer::Pool => dist.len(),
            WeightNormalizer::Dataset => ds.len(),
        };
        let alphas = biased_weights_with_normalizer(&dist, &positions, self.k, normalizer)?;
        let indices: Vec<usize> = positions.iter().map(|&p| dist.pool()[p]).collect();

        let batch: Vec<Example<'_>> = indices
            .iter()
            .map(|&i| Example {
                input: ds.row(i),
                target: ds.target(i),
            })
            .collect();
        let bundle =
            backward(&self.params, &batch, &alphas, Some(&mut self.rng)).map_err(|e| match e {
                Error::NonFinite { sample, value } => Error::NonFinite {
                    sample: indices[sample],
                    value,
                },
                other => other,
            })?;
        self.optimizer
            .step(self.params.values_mut(), &bundle.gradient)?;
        if self.config.lr_decay_at == Some(iteration) {
            self.optimizer.learning_rate *= self.config.lr_decay_factor;
        }

        if let Some(approx) = self.approx.as_mut() {
            let observations: Vec<TrainingObservation> = indices
                .iter()
                .zip(&bundle.per_sample_losses)
                .map(|(&i, &loss)| TrainingObservation {
                    sample: i,
                    class: ds.class_of(i),
                    loss,
                })
                .collect();
            approx_train_step(
                &mut approx.params,
                &observations,
                &self.history,
                &mut approx.optimizer,
            )?;
        }
        for (&i, &loss) in indices.iter().zip(&bundle.per_sample_losses) {
            self.history.record_loss(i, iteration, loss)?;
        }

        let batch_loss = bundle.per_sample_losses.iter().sum::<f64>() / b as f64;
        let ema_loss = self.ema.update(batch_loss);

        let var_trace = (b >= 2).then(|| {
            let mean_sq = bundle.weighted_sq_norms.iter().sum::<f64>() / b as f64;
            let mean_norm_sq: f64 = bundle.gradient.iter().map(|g| g * g).sum();
            (mean_sq - mean_norm_sq).max(0.0)
        });
        let tracking = match self.config.strategy {
            Strategy::Loss | Strategy::Approx if b >= 2 => {
                let predicted: Vec<f64> = positions.iter().map(|&p| dist.raw_scores()[p]).collect();
                Some(tracking_coefficients(
                    &predicted,
                    &bundle.per_sample_losses,
                )?)
            }
            _ => None,
        };
        let interval = self.config.max_loss_sweep_interval;
        let max_loss = if interval > 0 && iteration.is_multiple_of(interval) {
            Some(max_loss_sweep(&self.params, ds)?)
        } else {
            None
        };

        self.iteration = iteration;
        Ok(MetricsRecord {
            iteration,
            epoch: iteration as f64 * b as f64 / ds.len() as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            batch_loss,
            ema_loss,
            var_trace,
            max_loss,
            tracking,
            smoothing_c: dist.smoothing(),
        })
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub log: Vec<MetricsRecord>,
    pub params: MlpParams,
    pub approx: Option<ApproxParams>,
}

/// A run that stopped early; `log` holds every completed iteration.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TrainAbort {
    pub iteration: u64,
    pub error: Error,
    pub log: Vec<MetricsRecord>,
}

/// Runs `config.iterations` updates.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
) -> std::result::Result<TrainOutput, TrainAbort> {
    let mut trainer = Trainer::new(config.clone(), dataset).map_err(|error| TrainAbort {
        iteration: 0,
        error,
        log: Vec::new(),
    })?;
    let mut log = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        match trainer.step() {
            Ok(record) => log.push(record),
            Err(error) => {
                return Err(TrainAbort {
                    iteration: trainer.iteration() + 1,
                    error,
                    log,
                })
            }
        }
    }
    Ok(TrainOutput {
        log,
        params: trainer.params,
        approx: trainer.approx.map(|a| a.params),
    })
}
