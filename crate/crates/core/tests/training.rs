use isample::data::{synth_dataset, Dataset, SynthSpec};
use isample::metrics::to_csv_string;
use isample::trainer::{dataset_losses, train, Smoothing, Strategy, TrainConfig, Trainer};
use isample::Error;

fn blobs(n: usize, hard_fraction: f64, seed: u64) -> Dataset {
    let spec = SynthSpec {
        n,
        hard_fraction,
        ..SynthSpec::default()
    };
    synth_dataset(&spec, seed).unwrap()
}

fn config(strategy: Strategy, iterations: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        strategy,
        iterations,
        seed,
        batch_size: 16,
        max_loss_sweep_interval: 25,
        ..TrainConfig::default()
    }
}

#[test]
fn every_strategy_is_bitwise_reproducible() {
    let ds = blobs(256, 0.05, 3);
    for strategy in [
        Strategy::Uniform,
        Strategy::Loss,
        Strategy::Gnorm,
        Strategy::Approx,
    ] {
        let cfg = config(strategy, 60, 9);
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(
            to_csv_string(&a.log, false),
            to_csv_string(&b.log, false),
            "{strategy}"
        );
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.params.values()), bits(b.params.values()));
        if let (Some(x), Some(y)) = (&a.approx, &b.approx) {
            assert_eq!(bits(x.values()), bits(y.values()));
        }
    }
}

#[test]
fn different_seeds_differ() {
    let ds = blobs(128, 0.0, 0);
    let a = train(&config(Strategy::Loss, 10, 1), &ds).unwrap();
    let b = train(&config(Strategy::Loss, 10, 2), &ds).unwrap();
    assert_ne!(a.params.values(), b.params.values());
}

#[test]
fn metrics_are_monotone_and_finite() {
    let ds = blobs(200, 0.05, 4);
    for strategy in [Strategy::Uniform, Strategy::Approx] {
        let out = train(&config(strategy, 100, 5), &ds).unwrap();
        assert_eq!(out.log.len(), 100);
        for (w, r) in out.log.windows(2).zip(1..) {
            assert!(w[1].iteration > w[0].iteration);
            assert_eq!(w[0].iteration, r);
        }
        for r in &out.log {
            assert!(r.ema_loss.is_finite());
            assert!(r.var_trace.unwrap() >= 0.0);
            assert_eq!(r.max_loss.is_some(), r.iteration % 25 == 0);
            assert!((r.epoch - r.iteration as f64 * 16.0 / 200.0).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_sampling_reports_no_smoothing_or_tracking() {
    let ds = blobs(64, 0.0, 1);
    let out = train(&config(Strategy::Uniform, 20, 0), &ds).unwrap();
    assert!(out
        .log
        .iter()
        .all(|r| r.tracking.is_none() && r.smoothing_c == 0.0));
    let out = train(&config(Strategy::Loss, 20, 0), &ds).unwrap();
    assert!(out.log.iter().all(|r| r.tracking.is_some()));
}

#[test]
fn loss_sampling_fits_a_separable_set() {
    let spec = SynthSpec {
        n: 256,
        noise: 0.3,
        ..SynthSpec::default()
    };
    let ds = synth_dataset(&spec, 2).unwrap();
    let cfg = TrainConfig {
        strategy: Strategy::Loss,
        k: 0.5,
        smoothing: Smoothing::Adaptive,
        iterations: 2000,
        batch_size: 32,
        max_loss_sweep_interval: 0,
        seed: 6,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(cfg.clone(), &ds).unwrap();
    let initial = mean(&dataset_losses(trainer.params(), &ds).unwrap());
    let out = train(&cfg, &ds).unwrap();
    let fin = mean(&dataset_losses(&out.params, &ds).unwrap());
    assert!(fin * 10.0 <= initial, "initial {initial}, final {fin}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn non_finite_input_aborts_with_partial_log() {
    let mut features: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    features[2 * 7] = f64::NAN;
    let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let ds = Dataset::classification(features, 2, labels, 2).unwrap();
    let cfg = TrainConfig {
        strategy: Strategy::Uniform,
        batch_size: 4,
        iterations: 200,
        ..TrainConfig::default()
    };
    let abort = train(&cfg, &ds).unwrap_err();
    assert_eq!(abort.log.len() as u64 + 1, abort.iteration);
    match abort.error {
        Error::Diverged { iteration, source } => {
            assert_eq!(iteration, abort.iteration);
            assert!(
                matches!(*source, Error::NonFinite { sample: 7, .. }),
                "{source}"
            );
        }
        other => panic!("{other}"),
    }
}

#[test]
fn exploding_learning_rate_aborts() {
    let ds = blobs(64, 0.0, 0);
    let mut cfg = config(Strategy::Loss, 500, 0);
    cfg.optimizer.learning_rate = 1e300;
    let abort = train(&cfg, &ds).unwrap_err();
    assert!(abort.iteration >= 1 && abort.iteration <= 500);
    assert!(abort.log.iter().all(|r| r.batch_loss.is_finite()));
}

#[test]
fn invalid_configs_are_rejected_up_front() {
    let ds = blobs(32, 0.0, 0);
    let mut cfg = config(Strategy::Loss, 5, 0);
    cfg.k = 1.2;
    assert!(matches!(Trainer::new(cfg, &ds), Err(Error::Config { .. })));
    let mut cfg = config(Strategy::Loss, 5, 0);
    cfg.pool_factor = 0.5;
    assert!(matches!(Trainer::new(cfg, &ds), Err(Error::Config { .. })));
}

#[test]
fn dataset_weight_normalizer_scales_the_update() {
    use isample::trainer::WeightNormalizer;
    let ds = blobs(128, 0.0, 0);
    let mut cfg = config(Strategy::Uniform, 1, 0);
    cfg.k = 1.0;
    cfg.optimizer.kind = isample::nn::OptimizerKind::Sgd;
    cfg.optimizer.learning_rate = 0.1;
    let init = Trainer::new(cfg.clone(), &ds).unwrap().params().clone();
    let pool_run = train(&cfg, &ds).unwrap();
    cfg.weight_normalizer = WeightNormalizer::Dataset;
    let data_run = train(&cfg, &ds).unwrap();
    // uniform p = 1/32 over the pool: α = 1 for the pool, 32/128 for the dataset
    for ((a, b), c) in pool_run
        .params
        .values()
        .iter()
        .zip(data_run.params.values())
        .zip(init.values())
    {
        assert!(((b - c) - 0.25 * (a - c)).abs() < 1e-12);
    }
}
