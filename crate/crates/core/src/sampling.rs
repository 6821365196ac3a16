//! Importance distributions over a pre-sampled pool, multinomial mini-batch
//! draws and the biased correction weights `α_i = 1 / (n · p_i^k)`.

use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Exponent `k` of the correction weights. `k = 1` gives an unbiased
/// estimator of the mean gradient; smaller values shift the implicit
/// objective towards the high-loss samples.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct BiasExponent(f64);

impl BiasExponent {
    pub const UNBIASED: BiasExponent = BiasExponent(1.0);

    pub fn new(k: f64) -> Result<Self> {
        if !k.is_finite() || k > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "bias exponent k = {k} must be finite and satisfy k <= 1"
            )));
        }
        Ok(BiasExponent(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Negative exponents amplify large-gradient samples and tend to make
    /// training noisy.
    pub fn is_noisy(self) -> bool {
        self.0 < 0.0
    }
}

impl Default for BiasExponent {
    fn default() -> Self {
        BiasExponent(0.5)
    }
}

/// Smoothed, normalized sampling distribution over a pool of dataset
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceDistribution {
    pool: Vec<usize>,
    raw_scores: Vec<f64>,
    smoothing: f64,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    uniform: bool,
}

impl ImportanceDistribution {
    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw_scores
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// True when every smoothed score is identical; probabilities are then
    /// exactly `1/n`.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }
}

/// Draws `min(pool_size, dataset_size)` distinct indices uniformly.
pub fn presample_pool<R: Rng + ?Sized>(
    dataset_size: usize,
    pool_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if dataset_size == 0 {
        return Err(Error::EmptyDataset);
    }
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool size must be >= 1".into()));
    }
    let amount = pool_size.min(dataset_size);
    Ok(rand::seq::index::sample(rng, dataset_size, amount).into_vec())
}

/// `p_i = (s_i + c) / Σ_j (s_j + c)`.
pub fn build_distribution(
    pool: Vec<usize>,
    raw_scores: Vec<f64>,
    smoothing: f64,
) -> Result<ImportanceDistribution> {
    check_len("importance scores", pool.len(), raw_scores.len())?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing constant {smoothing} must be finite and >= 0"
        )));
    }
    if raw_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "importance scores",
        });
    }
    if let Some(s) = raw_scores.iter().find(|s| **s < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "importance score {s} is negative"
        )));
    }
    let shifted: Vec<f64> = raw_scores.iter().map(|s| s + smoothing).collect();
    let total: f64 = shifted.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateDistribution);
    }
    let n = shifted.len();
    let uniform = shifted.iter().all(|s| *s == shifted[0]);
    let probs: Vec<f64> = if uniform {
        vec![1.0 / n as f64; n]
    } else {
        shifted.iter().map(|s| s / total).collect()
    };
    let cumulative = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok(ImportanceDistribution {
        pool,
        raw_scores,
        smoothing,
        probs,
        cumulative,
        uniform,
    })
}

/// Half the running mean loss.
pub fn adaptive_smoothing_constant(ema_mean_loss: f64) -> f64 {
    ema_mean_loss / 2.0
}

/// `α_i = 1 / (n · p_i^k)` with `n` the pool size.
pub fn biased_weights(
    dist: &ImportanceDistribution,
    chosen: &[usize],
    k: BiasExponent,
) -> Result<Vec<f64>> {
    biased_weights_with_normalizer(dist, chosen, k, dist.len())
}

/// Same as [`biased_weights`] with an explicit normalizer `n` (for example
/// the full dataset size).
pub fn biased_weights_with_normalizer(
    dist: &ImportanceDistribution,
    chosen: &[usize],
    k: BiasExponent,
    normalizer: usize,
) -> Result<Vec<f64>> {
    if normalizer == 0 {
        return Err(Error::InvalidArgument(
            "weight normalizer must be >= 1".into(),
        ));
    }
    let k = k.value();
    let n = normalizer as f64;
    chosen
        .iter()
        .map(|&pos| {
            let p = *dist.probs.get(pos).ok_or(Error::Index {
                what: "pool position",
                index: pos,
                len: dist.len(),
            })?;
            if p == 0.0 && k > 0.0 {
                return Err(Error::ZeroProbability { position: pos, k });
            }
            let alpha = if dist.uniform && normalizer == dist.len() {
                // n · (1/n)^k = n^(1-k), exact for k = 1
                n.powf(k - 1.0)
            } else {
                1.0 / (n * p.powf(k))
            };
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::ZeroProbability { position: pos, k });
            }
            Ok(alpha)
        })
        .collect()
}

/// `batch_size` independent draws (with replacement) of pool positions by
/// inverse-CDF search over the prefix sums.
pub fn sample_batch<R: Rng + ?Sized>(
    dist: &ImportanceDistribution,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let total = *dist
        .cumulative
        .last()
        .ok_or(Error::DegenerateDistribution)?;
    if !(total > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    let last = dist.len() - 1;
    Ok((0..batch_size)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let mut pos = dist.cumulative.partition_point(|&c| c <= u).min(last);
            // rounding can land past the final positive mass
            while dist.probs[pos] == 0.0 && pos > 0 {
                pos -= 1;
            }
            pos
        })
        .collect())
}
