//! Per-sample loss history and the lightweight loss predictor trained
//! alongside the main model.
//!
//! The predictor runs an LSTM over a sample's most recent losses, embeds the
//! sample's class, concatenates both representations and maps them to a
//! scalar with a linear head. It never looks at the raw inputs.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::embedding::{accumulate_row, embedding_row};
use crate::nn::init::glorot_uniform;
use crate::nn::lstm::LstmShape;
use crate::nn::OptimizerState;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_EMBED: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub iteration: u64,
    pub loss: f64,
}

/// Bounded ring of the most recent observations for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryStore {
    capacity: usize,
    buffers: Vec<VecDeque<Observation>>,
    observations: u64,
}

impl Default for HistoryStore {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl HistoryStore {
    pub fn new(capacity: usize) -> Self {
        HistoryStore {
            capacity: capacity.max(1),
            buffers: Vec::new(),
            observations: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of observations ever recorded.
    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn record_loss(&mut self, sample: usize, iteration: u64, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                sample,
                value: loss,
            });
        }
        if sample >= self.buffers.len() {
            self.buffers.resize_with(sample + 1, VecDeque::new);
        }
        let buf = &mut self.buffers[sample];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(Observation { iteration, loss });
        self.observations += 1;
        Ok(())
    }

    pub fn entries(&self, sample: usize) -> impl Iterator<Item = &Observation> {
        self.buffers.get(sample).into_iter().flatten()
    }

    /// Recorded losses, oldest first.
    pub fn loss_history(&self, sample: usize) -> Vec<f64> {
        self.entries(sample).map(|o| o.loss).collect()
    }
}

/// Parameters of the loss predictor, stored flat in declaration order:
/// LSTM weights and biases, class embedding table, head weights, head bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxParams {
    lstm: LstmShape,
    num_classes: usize,
    embed_dim: usize,
    values: Vec<f64>,
}

impl ApproxParams {
    pub fn zeros(num_classes: usize, hidden: usize, embed_dim: usize) -> Result<Self> {
        if num_classes == 0 || hidden == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "approximator dimensions must be positive".into(),
            ));
        }
        let lstm = LstmShape::new(1, hidden);
        let len = lstm.num_params() + num_classes * embed_dim + hidden + embed_dim + 1;
        Ok(ApproxParams {
            lstm,
            num_classes,
            embed_dim,
            values: vec![0.0; len],
        })
    }

    pub fn init<R: Rng + ?Sized>(
        num_classes: usize,
        hidden: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(num_classes, hidden, embed_dim)?;
        let (lstm, rest) = p.values.split_at_mut(p.lstm.num_params());
        p.lstm.init(lstm, rng);
        let (table, head) = rest.split_at_mut(num_classes * embed_dim);
        glorot_uniform(table, num_classes, embed_dim, rng);
        let feature = hidden + embed_dim;
        glorot_uniform(&mut head[..feature], feature, 1, rng);
        head[feature] = 0.0;
        Ok(p)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    fn table_offset(&self) -> usize {
        self.lstm.num_params()
    }

    fn head_offset(&self) -> usize {
        self.table_offset() + self.num_classes * self.embed_dim
    }

    fn feature_dim(&self) -> usize {
        self.lstm.hidden_size + self.embed_dim
    }

    pub fn lstm_values(&self) -> &[f64] {
        &self.values[..self.table_offset()]
    }

    pub fn embedding_table(&self) -> &[f64] {
        &self.values[self.table_offset()..self.head_offset()]
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.values[self.head_offset()..self.head_offset() + self.feature_dim()]
    }

    pub fn head_bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn set_head_bias(&mut self, b: f64) {
        let last = self.values.len() - 1;
        self.values[last] = b;
    }

    /// Unclamped prediction for a loss history (oldest first) and class.
    pub fn raw_prediction(&self, history: &[f64], class: usize) -> Result<f64> {
        let embed = embedding_row(
            self.embedding_table(),
            self.num_classes,
            self.embed_dim,
            class,
        )?;
        let seq: Vec<Vec<f64>> = history.iter().map(|&l| vec![l]).collect();
        let hidden = self.lstm.forward(self.lstm_values(), &seq)?;
        let w = self.head_weights();
        let dot = hidden
            .iter()
            .chain(embed)
            .zip(w)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        Ok(dot + self.head_bias())
    }

    /// Adds `scale · ∂prediction/∂π` into `grad` and returns the prediction.
    fn accumulate_grad(
        &self,
        history: &[f64],
        class: usize,
        scale_of: impl FnOnce(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let embed = embedding_row(
            self.embedding_table(),
            self.num_classes,
            self.embed_dim,
            class,
        )?;
        let seq: Vec<Vec<f64>> = history.iter().map(|&l| vec![l]).collect();
        let trace = self.lstm.forward_trace(self.lstm_values(), &seq)?;
        let hidden = trace.final_hidden(self.lstm.hidden_size);
        let w = self.head_weights();
        let pred = hidden
            .iter()
            .chain(embed)
            .zip(w)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.head_bias();
        let scale = scale_of(pred);
        if scale == 0.0 {
            return Ok(pred);
        }

        let h = self.lstm.hidden_size;
        let head = self.head_offset();
        for (j, f) in hidden.iter().chain(embed).enumerate() {
            grad[head + j] += scale * f;
        }
        let last = grad.len() - 1;
        grad[last] += scale;

        let d_embed: Vec<f64> = w[h..].iter().map(|wj| scale * wj).collect();
        let table = self.table_offset();
        accumulate_row(&mut grad[table..head], self.embed_dim, class, &d_embed);

        if !history.is_empty() {
            let d_hidden: Vec<f64> = w[..h].iter().map(|wj| scale * wj).collect();
            self.lstm
                .backward(self.lstm_values(), &trace, &d_hidden, &mut grad[..table])?;
        }
        Ok(pred)
    }

    /// Gradient of `(1/m) Σ (M_i − L_i)²` over the observations, using each
    /// sample's history as stored. Returns `(objective, gradient)`.
    pub fn regression_gradient(
        &self,
        observations: &[TrainingObservation],
        store: &HistoryStore,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        if observations.is_empty() {
            return Ok((0.0, grad));
        }
        let inv = 1.0 / observations.len() as f64;
        let mut objective = 0.0;
        for obs in observations {
            let history = store.loss_history(obs.sample);
            let target = obs.loss;
            let mut residual = 0.0;
            self.accumulate_grad(
                &history,
                obs.class,
                |pred| {
                    residual = pred - target;
                    2.0 * residual * inv
                },
                &mut grad,
            )?;
            objective += residual * residual * inv;
        }
        Ok((objective, grad))
    }

    /// Little-endian checkpoint: magic `ISAP`, format version, then
    /// `num_classes`, `input_size`, `hidden_size`, `embed_dim`, parameter
    /// count (all `u32`), then every parameter as `f64` in declaration order.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            CHECKPOINT_VERSION,
            self.num_classes as u32,
            self.lstm.input_size as u32,
            self.lstm.hidden_size as u32,
            self.embed_dim as u32,
            self.values.len() as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() < 28 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing ISAP header".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                word(0)
            )));
        }
        if word(2) != 1 {
            return Err(Error::Checkpoint(format!("input size {} != 1", word(2))));
        }
        let mut params = Self::zeros(word(1), word(3), word(4))?;
        let count = word(5);
        if count != params.num_params() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match dims ({})",
                params.num_params()
            )));
        }
        let body = &bytes[28..];
        if body.len() != count * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                count * 8,
                body.len()
            )));
        }
        for (v, chunk) in params.values.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(params)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ISAP";
const CHECKPOINT_VERSION: u32 = 1;

/// A sample whose true loss was just computed by the main model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingObservation {
    pub sample: usize,
    pub class: usize,
    pub loss: f64,
}

/// Importance score for one sample: the running mean loss when the sample
/// has no history, otherwise the prediction clamped at zero.
pub fn predict_importance(
    params: &ApproxParams,
    sample: usize,
    class: usize,
    store: &HistoryStore,
    ema_mean_loss: f64,
) -> Result<f64> {
    let history = store.loss_history(sample);
    if history.is_empty() {
        if class >= params.num_classes {
            return Err(Error::Index {
                what: "class",
                index: class,
                len: params.num_classes,
            });
        }
        return Ok(ema_mean_loss);
    }
    let raw = params.raw_prediction(&history, class)?;
    Ok(if raw > 0.0 { raw } else { 0.0 })
}

/// One optimizer step on the squared prediction error. `store` must not yet
/// contain this iteration's losses. Returns the pre-step objective.
pub fn approx_train_step(
    params: &mut ApproxParams,
    observations: &[TrainingObservation],
    store: &HistoryStore,
    optimizer: &mut OptimizerState,
) -> Result<f64> {
    let (objective, grad) = params.regression_gradient(observations, store)?;
    if !objective.is_finite() {
        return Err(Error::NonFiniteInput {
            what: "approximator objective",
        });
    }
    optimizer.step(&mut params.values, &grad)?;
    Ok(objective)
}
