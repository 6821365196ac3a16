//! Offline diagnostics: how well importance scores track the true losses,
//! whether the loss orders samples like the gradient norm does, exact
//! estimator moments by enumeration, and cross-run summaries.

use std::collections::BTreeMap;

use crate::error::{check_len, Error, Result};
use crate::metrics::MetricsRecord;

pub const ORDERING_WINDOW: usize = 50;

/// Least-squares fit `actual ≈ a · predicted + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingFit {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// Closed-form simple regression of `actual` on `predicted`. When the
/// predictions are (numerically) constant, `a = 0` and `b` is the mean of
/// `actual`.
pub fn tracking_coefficients(predicted: &[f64], actual: &[f64]) -> Result<TrackingFit> {
    check_len("tracking pairs", predicted.len(), actual.len())?;
    let n = predicted.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "tracking fit needs >= 2 pairs, got {n}"
        )));
    }
    let m = n as f64;
    let mean_p = predicted.iter().sum::<f64>() / m;
    let mean_a = actual.iter().sum::<f64>() / m;
    let var_p = predicted.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>() / m;
    if var_p < 1e-12 {
        return Ok(TrackingFit {
            a: 0.0,
            b: mean_a,
            n,
        });
    }
    let cov = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - mean_p) * (a - mean_a))
        .sum::<f64>()
        / m;
    let a = cov / var_p;
    Ok(TrackingFit {
        a,
        b: mean_a - a * mean_p,
        n,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank ties; 0 when either input
/// is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("spearman inputs", x.len(), y.len())?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let m = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / m;
    let my = ry.iter().sum::<f64>() / m;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sliding-window mean and population standard deviation; both outputs
/// have `max(0, n - window + 1)` entries.
pub fn moving_stats(values: &[f64], window: usize) -> (Vec<f64>, Vec<f64>) {
    if window == 0 || values.len() < window {
        return (Vec::new(), Vec::new());
    }
    values
        .windows(window)
        .map(|w| {
            let mean = w.iter().sum::<f64>() / window as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
            (mean, var.sqrt())
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderingDiagnostic {
    pub spearman: f64,
    /// Losses sorted by ascending gradient norm.
    pub sorted_losses: Vec<f64>,
    pub moving_avg: Vec<f64>,
    pub moving_std: Vec<f64>,
    pub window: usize,
}

/// Sorts the losses by gradient norm and summarizes how monotone the
/// result is.
pub fn loss_gnorm_ordering(losses: &[f64], gnorms: &[f64]) -> Result<OrderingDiagnostic> {
    check_len("gradient norms", losses.len(), gnorms.len())?;
    if let Some(g) = gnorms.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "gradient norm {g} must be >= 0"
        )));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| gnorms[a].total_cmp(&gnorms[b]));
    let sorted_losses: Vec<f64> = order.iter().map(|&i| losses[i]).collect();
    let (moving_avg, moving_std) = moving_stats(&sorted_losses, ORDERING_WINDOW);
    Ok(OrderingDiagnostic {
        spearman: spearman(losses, gnorms)?,
        sorted_losses,
        moving_avg,
        moving_std,
        window: ORDERING_WINDOW,
    })
}

/// Exact expectation `Σ_i p_i α_i g_i` of the single-draw gradient estimator.
pub fn expected_update(grads: &[Vec<f64>], probs: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_len("probabilities", grads.len(), probs.len())?;
    check_len("weights", grads.len(), weights.len())?;
    let dim = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for ((g, p), a) in grads.iter().zip(probs).zip(weights) {
        check_len("gradient", dim, g.len())?;
        out.iter_mut().zip(g).for_each(|(o, x)| *o += p * a * x);
    }
    Ok(out)
}

/// Exact `Tr V_P[α_i g_i] = Σ_i p_i ‖α_i g_i‖² − ‖Σ_i p_i α_i g_i‖²`.
pub fn sampling_variance_trace(grads: &[Vec<f64>], probs: &[f64], weights: &[f64]) -> Result<f64> {
    let mean = expected_update(grads, probs, weights)?;
    let second: f64 = grads
        .iter()
        .zip(probs)
        .zip(weights)
        .map(|((g, p), a)| p * a * a * g.iter().map(|x| x * x).sum::<f64>())
        .sum();
    Ok(second - mean.iter().map(|m| m * m).sum::<f64>())
}

/// A metrics log tagged with the cell it belongs to. Logs sharing a label
/// are treated as repeated seeds of one configuration.
#[derive(Clone, Debug)]
pub struct LabeledLog {
    pub label: String,
    pub records: Vec<MetricsRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportOptions {
    pub window: usize,
    /// Batch-loss level used for the iterations-to-threshold statistic.
    pub loss_threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            window: 50,
            loss_threshold: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategySummary {
    pub label: String,
    pub runs: usize,
    /// Iteration at the end of each moving window.
    pub iterations: Vec<u64>,
    pub loss_mean: Vec<f64>,
    pub loss_std: Vec<f64>,
    pub var_mean: Vec<f64>,
    pub var_std: Vec<f64>,
    /// First iteration at which the run-averaged moving loss is at or
    /// below the threshold.
    pub iterations_to_threshold: Option<u64>,
    /// Median over runs of each run's own first crossing; runs that never
    /// cross are excluded, `None` when none crosses.
    pub median_run_iterations_to_threshold: Option<f64>,
}

impl StrategySummary {
    pub fn final_loss_mean(&self) -> Option<f64> {
        self.loss_mean.last().copied()
    }

    pub fn final_loss_std(&self) -> Option<f64> {
        self.loss_std.last().copied()
    }

    pub fn final_var_mean(&self) -> Option<f64> {
        self.var_mean.last().copied()
    }
}

/// First iteration where the moving mean of `values` reaches `threshold`.
pub fn iterations_to_threshold(
    iterations: &[u64],
    values: &[f64],
    window: usize,
    threshold: f64,
) -> Option<u64> {
    let (mean, _) = moving_stats(values, window);
    mean.iter()
        .position(|m| *m <= threshold)
        .map(|p| iterations[p + window - 1])
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-label moving statistics of batch loss and gradient-variance trace,
/// averaged over the label's runs on their shared iteration grid.
pub fn variance_report(
    logs: &[LabeledLog],
    options: &ReportOptions,
) -> Result<Vec<StrategySummary>> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument(
            "variance report needs at least one log".into(),
        ));
    }
    if options.window == 0 {
        return Err(Error::InvalidArgument("report window must be >= 1".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&[MetricsRecord]>> = BTreeMap::new();
    for log in logs {
        if log.records.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "log `{}` is empty",
                log.label
            )));
        }
        groups.entry(&log.label).or_default().push(&log.records);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (label, runs) in groups {
        let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
        let grid: Vec<u64> = runs[0][..len].iter().map(|r| r.iteration).collect();
        for run in &runs {
            if run[..len]
                .iter()
                .map(|r| r.iteration)
                .ne(grid.iter().copied())
            {
                return Err(Error::InvalidArgument(format!(
                    "logs of `{label}` do not share an iteration grid"
                )));
            }
        }
        let m = runs.len() as f64;
        let avg_loss: Vec<f64> = (0..len)
            .map(|t| runs.iter().map(|r| r[t].batch_loss).sum::<f64>() / m)
            .collect();
        let var_points: Vec<(u64, f64)> = (0..len)
            .filter_map(|t| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r[t].var_trace).collect();
                (!vals.is_empty()).then(|| (grid[t], vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect();
        let var_values: Vec<f64> = var_points.iter().map(|p| p.1).collect();

        let (loss_mean, loss_std) = moving_stats(&avg_loss, options.window);
        let (var_mean, var_std) = moving_stats(&var_values, options.window);
        let iterations = if len >= options.window {
            grid[options.window - 1..].to_vec()
        } else {
            Vec::new()
        };
        let mut per_run: Vec<f64> = runs
            .iter()
            .filter_map(|r| {
                let losses: Vec<f64> = r[..len].iter().map(|x| x.batch_loss).collect();
                iterations_to_threshold(&grid, &losses, options.window, options.loss_threshold)
            })
            .map(|i| i as f64)
            .collect();
        out.push(StrategySummary {
            label: label.to_string(),
            runs: runs.len(),
            iterations_to_threshold: iterations_to_threshold(
                &grid,
                &avg_loss,
                options.window,
                options.loss_threshold,
            ),
            median_run_iterations_to_threshold: median(&mut per_run),
            iterations,
            loss_mean,
            loss_std,
            var_mean,
            var_std,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tracking_examples() {
        let x = [0.5, 1.0, 2.5, 4.0];
        let fit = tracking_coefficients(&x, &x).unwrap();
        assert!((fit.a - 1.0).abs() < 1e-12 && fit.b.abs() < 1e-12);

        let actual = [0.2, 1.1, 3.0, 0.7];
        let predicted: Vec<f64> = actual.iter().map(|a| 2.0 * a + 3.0).collect();
        let fit = tracking_coefficients(&predicted, &actual).unwrap();
        assert!((fit.a - 0.5).abs() < 1e-12);
        assert!((fit.b + 1.5).abs() < 1e-12);

        let fit = tracking_coefficients(&[2.0; 4], &actual).unwrap();
        assert_eq!(fit.a, 0.0);
        assert!((fit.b - 1.25).abs() < 1e-15);

        assert!(tracking_coefficients(&[1.0], &[1.0]).is_err());
        assert!(tracking_coefficients(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn spearman_extremes() {
        let l = [0.3, 1.2, 0.1, 5.0, 2.2];
        assert_eq!(spearman(&l, &l).unwrap(), 1.0);
        let rev: Vec<f64> = l.iter().map(|v| 10.0 - v).collect();
        assert_eq!(spearman(&l, &rev).unwrap(), -1.0);
        let d = loss_gnorm_ordering(&l, &l).unwrap();
        assert_eq!(d.spearman, 1.0);
        assert_eq!(d.sorted_losses, vec![0.1, 0.3, 1.2, 2.2, 5.0]);
        assert!(d.moving_avg.is_empty());
        assert!(loss_gnorm_ordering(&l, &[1.0; 4]).is_err());
    }

    #[test]
    fn ordering_window_lengths() {
        let losses: Vec<f64> = (0..120).map(|i| (i as f64).sin().abs()).collect();
        let d = loss_gnorm_ordering(&losses, &losses).unwrap();
        assert_eq!(d.moving_avg.len(), 71);
        assert_eq!(d.moving_std.len(), 71);
    }

    fn sse(p: &[f64], a: &[f64], fa: f64, fb: f64) -> f64 {
        p.iter()
            .zip(a)
            .map(|(p, a)| (fa * p + fb - a).powi(2))
            .sum()
    }

    proptest! {
        #[test]
        fn fit_is_a_local_minimum_with_zero_mean_residual(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)
        ) {
            let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let fit = tracking_coefficients(&p, &a).unwrap();
            let best = sse(&p, &a, fit.a, fit.b);
            for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
                prop_assert!(sse(&p, &a, fit.a + da, fit.b + db) >= best - 1e-9);
            }
            let resid: f64 = p.iter().zip(&a).map(|(p, a)| fit.a * p + fit.b - a).sum::<f64>() / p.len() as f64;
            prop_assert!(resid.abs() < 1e-9);
        }

        #[test]
        fn spearman_ignores_monotone_transforms(
            xs in prop::collection::vec(-5.0f64..5.0, 2..40),
            ys in prop::collection::vec(-5.0f64..5.0, 40),
        ) {
            let ys = &ys[..xs.len()];
            let base = spearman(&xs, ys).unwrap();
            let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let ty: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
            prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
        }
    }

    fn log(label: &str, losses: &[f64]) -> LabeledLog {
        LabeledLog {
            label: label.into(),
            records: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| MetricsRecord {
                    iteration: i as u64 + 1,
                    epoch: 0.0,
                    wall_ms: 0.0,
                    batch_loss: l,
                    ema_loss: l,
                    var_trace: Some(l * 2.0),
                    max_loss: None,
                    tracking: None,
                    smoothing_c: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn report_single_log_window_one() {
        let losses = [3.0, 2.0, 1.5, 0.5];
        let r = variance_report(
            &[log("a", &losses)],
            &ReportOptions {
                window: 1,
                loss_threshold: 1.5,
            },
        )
        .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].loss_mean, losses.to_vec());
        assert_eq!(r[0].loss_std, vec![0.0; 4]);
        assert_eq!(r[0].iterations_to_threshold, Some(3));
        assert_eq!(r[0].median_run_iterations_to_threshold, Some(3.0));
    }

    #[test]
    fn report_identical_logs_identical_rows() {
        let losses = [1.0, 0.8, 0.9, 0.4, 0.3];
        let opts = ReportOptions {
            window: 2,
            loss_threshold: 0.5,
        };
        let r = variance_report(&[log("a", &losses), log("b", &losses)], &opts).unwrap();
        let mut b = r[1].clone();
        b.label = "a".into();
        assert_eq!(r[0], b);
        assert!(variance_report(&[], &opts).is_err());
    }

    #[test]
    fn threshold_matches_linear_scan() {
        let losses: Vec<f64> = (0..200)
            .map(|i| 2.0 / (1.0 + i as f64 * 0.05) + 0.1 * ((i * 7) % 5) as f64)
            .collect();
        let iters: Vec<u64> = (1..=200).collect();
        for window in [1, 5, 20] {
            for threshold in [0.3, 0.6, 1.0, 5.0, 0.0] {
                let mut brute = None;
                for end in window..=losses.len() {
                    let m = losses[end - window..end].iter().sum::<f64>() / window as f64;
                    if m <= threshold {
                        brute = Some(iters[end - 1]);
                        break;
                    }
                }
                assert_eq!(
                    iterations_to_threshold(&iters, &losses, window, threshold),
                    brute
                );
            }
        }
    }

    #[test]
    fn enumerated_moments() {
        let grads = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let probs = [0.25, 0.75];
        let weights = [2.0, 2.0 / 3.0];
        let e = expected_update(&grads, &probs, &weights).unwrap();
        assert_eq!(e, vec![0.5, 1.0]);
        let v = sampling_variance_trace(&grads, &probs, &weights).unwrap();
        // draws: (2,0) w.p. 1/4 and (0,4/3) w.p. 3/4
        let expected = 0.25 * 4.0 + 0.75 * 16.0 / 9.0 - 1.25;
        assert!((v - expected).abs() < 1e-12);
    }
}
