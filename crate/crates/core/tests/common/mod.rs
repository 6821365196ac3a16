//! Central finite-difference checks shared by the gradient tests and the
//! acceptance run.
#![allow(dead_code)]

use isample::history::{ApproxParams, HistoryStore, TrainingObservation};
use isample::nn::{
    backward, loss_mse, loss_nll, standard_layers, Activation, Example, LstmShape, MlpParams,
    Target,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    pub name: &'static str,
    pub configs: usize,
    pub max_rel_err: f64,
}

/// Elementwise relative error with an absolute floor for near-zero entries.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + STEP;
            let up = f(&probe);
            probe[j] = x[j] - STEP;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_hidden(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.random_range(0..=2);
    (0..depth).map(|_| rng.random_range(1..=6)).collect()
}

/// Glorot weights plus non-zero biases, so no pre-activation sits exactly
/// on a ReLU kink.
fn random_mlp(specs: &[isample::nn::LayerSpec], rng: &mut ChaCha8Rng) -> MlpParams {
    let glorot = MlpParams::init(specs, rng).unwrap();
    let layers: Vec<(Vec<f64>, Vec<f64>)> = (0..specs.len())
        .map(|l| {
            let bias = random_vec(rng, specs[l].outputs, 0.5);
            (glorot.weight(l).to_vec(), bias)
        })
        .collect();
    MlpParams::from_layers(specs, &layers).unwrap()
}

/// Margin below which a ReLU pre-activation counts as sitting on the kink,
/// where a central difference straddles two linear pieces.
pub const KINK_MARGIN: f64 = 1e-3;

/// True when any hidden ReLU pre-activation of `x` lies within the margin.
fn near_kink(params: &MlpParams, x: &[f64]) -> bool {
    let mut a = x.to_vec();
    for (l, layer) in params.layers().iter().enumerate() {
        let (w, b) = (params.weight(l), params.bias(l));
        let z: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                (0..layer.inputs)
                    .map(|i| w[o * layer.inputs + i] * a[i])
                    .sum::<f64>()
                    + b[o]
            })
            .collect();
        if layer.activation == Activation::Relu {
            if z.iter().any(|z| z.abs() < KINK_MARGIN) {
                return true;
            }
            a = z.into_iter().map(|z| z.max(0.0)).collect();
        } else {
            a = z;
        }
    }
    false
}

fn random_inputs(rng: &mut ChaCha8Rng, params: &MlpParams, b: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|_| loop {
            let x = random_vec(rng, params.input_dim(), 2.0);
            if !near_kink(params, &x) {
                break x;
            }
        })
        .collect()
}

fn with_values(template: &MlpParams, values: &[f64]) -> MlpParams {
    let mut p = template.clone();
    p.values_mut().copy_from_slice(values);
    p
}

/// Weighted mean NLL `(1/B) Σ α_i L_i` of random MLPs, dropout off.
pub fn mlp_nll(seed: u64, configs: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let inputs = rng.random_range(1..=5);
        let classes = rng.random_range(2..=5);
        let specs = standard_layers(inputs, &random_hidden(&mut rng), classes, 0.0);
        let params = random_mlp(&specs, &mut rng);
        let b = rng.random_range(1..=4);
        let xs = random_inputs(&mut rng, &params, b);
        let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let alphas: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..3.0)).collect();
        let batch: Vec<Example<'_>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| Example {
                input: x,
                target: Target::Class(y),
            })
            .collect();
        let analytic = backward(&params, &batch, &alphas, None).unwrap().gradient;
        let numeric = central_diff(params.values(), |v| {
            let p = with_values(&params, v);
            xs.iter()
                .zip(&ys)
                .zip(&alphas)
                .map(|((x, &y), a)| a * loss_nll(&p.forward(x, None).unwrap(), y).unwrap())
                .sum::<f64>()
                / b as f64
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    FdReport {
        name: "mlp nll",
        configs,
        max_rel_err: worst,
    }
}

/// Weighted mean MSE of random MLPs with vector targets.
pub fn mlp_mse(seed: u64, configs: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let inputs = rng.random_range(1..=4);
        let outputs = rng.random_range(1..=3);
        let specs = standard_layers(inputs, &random_hidden(&mut rng), outputs, 0.0);
        let params = random_mlp(&specs, &mut rng);
        let b = rng.random_range(1..=4);
        let xs = random_inputs(&mut rng, &params, b);
        let ys: Vec<Vec<f64>> = (0..b).map(|_| random_vec(&mut rng, outputs, 1.5)).collect();
        let alphas: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..3.0)).collect();
        let batch: Vec<Example<'_>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Example {
                input: x,
                target: Target::Values(y),
            })
            .collect();
        let analytic = backward(&params, &batch, &alphas, None).unwrap().gradient;
        let numeric = central_diff(params.values(), |v| {
            let p = with_values(&params, v);
            xs.iter()
                .zip(&ys)
                .zip(&alphas)
                .map(|((x, y), a)| a * loss_mse(&p.forward(x, None).unwrap(), y).unwrap())
                .sum::<f64>()
                / b as f64
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    FdReport {
        name: "mlp mse",
        configs,
        max_rel_err: worst,
    }
}

/// NLL through dropout; the mask is held fixed by replaying the same seed.
pub fn mlp_dropout(seed: u64, configs: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let inputs = rng.random_range(1..=4);
        let classes = rng.random_range(2..=4);
        let hidden = vec![rng.random_range(3..=8)];
        let specs = standard_layers(inputs, &hidden, classes, 0.3);
        let params = random_mlp(&specs, &mut rng);
        let b = rng.random_range(1..=3);
        let xs = random_inputs(&mut rng, &params, b);
        let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let mask_seed: u64 = rng.random();
        let batch: Vec<Example<'_>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| Example {
                input: x,
                target: Target::Class(y),
            })
            .collect();
        let ones = vec![1.0; b];
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let analytic = backward(&params, &batch, &ones, Some(&mut mask_rng))
            .unwrap()
            .gradient;
        let numeric = central_diff(params.values(), |v| {
            let p = with_values(&params, v);
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            xs.iter()
                .zip(&ys)
                .map(|(x, &y)| loss_nll(&p.forward(x, Some(&mut mask_rng)).unwrap(), y).unwrap())
                .sum::<f64>()
                / b as f64
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    FdReport {
        name: "mlp dropout",
        configs,
        max_rel_err: worst,
    }
}

/// `v · h_T` of a random LSTM, with respect to parameters and inputs.
pub fn lstm(seed: u64, configs: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let shape = LstmShape::new(rng.random_range(1..=3), rng.random_range(1..=5));
        let mut params = vec![0.0; shape.num_params()];
        shape.init(&mut params, &mut rng);
        // non-zero biases exercise every gate path
        for p in params[shape.weight_len()..].iter_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        let len = rng.random_range(1..=6);
        let seq: Vec<Vec<f64>> = (0..len)
            .map(|_| random_vec(&mut rng, shape.input_size, 1.5))
            .collect();
        let v = random_vec(&mut rng, shape.hidden_size, 1.0);
        let objective = |p: &[f64], s: &[Vec<f64>]| -> f64 {
            shape
                .forward(p, s)
                .unwrap()
                .iter()
                .zip(&v)
                .map(|(h, w)| h * w)
                .sum()
        };

        let trace = shape.forward_trace(&params, &seq).unwrap();
        let mut analytic = vec![0.0; params.len()];
        let d_inputs = shape.backward(&params, &trace, &v, &mut analytic).unwrap();
        let numeric = central_diff(&params, |p| objective(p, &seq));
        worst = worst.max(rel_err(&analytic, &numeric));

        let flat: Vec<f64> = seq.iter().flatten().copied().collect();
        let numeric_in = central_diff(&flat, |f| {
            let s: Vec<Vec<f64>> = f.chunks(shape.input_size).map(<[f64]>::to_vec).collect();
            objective(&params, &s)
        });
        let analytic_in: Vec<f64> = d_inputs.into_iter().flatten().collect();
        worst = worst.max(rel_err(&analytic_in, &numeric_in));
    }
    FdReport {
        name: "lstm",
        configs,
        max_rel_err: worst,
    }
}

/// Regression objective of the loss predictor: LSTM over histories, class
/// embedding and linear head together.
pub fn approximator(seed: u64, configs: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let classes = rng.random_range(2..=4);
        let params = ApproxParams::init(
            classes,
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            &mut rng,
        )
        .unwrap();
        let samples = 6;
        let mut store = HistoryStore::new(rng.random_range(1..=5));
        for it in 1..=rng.random_range(0..=7u64) {
            for s in 0..samples {
                if rng.random_bool(0.6) {
                    store
                        .record_loss(s, it, rng.random_range(0.0..3.0))
                        .unwrap();
                }
            }
        }
        let obs: Vec<TrainingObservation> = (0..rng.random_range(1..=5))
            .map(|_| TrainingObservation {
                sample: rng.random_range(0..samples),
                class: rng.random_range(0..classes),
                loss: rng.random_range(0.0..3.0),
            })
            .collect();
        let (_, analytic) = params.regression_gradient(&obs, &store).unwrap();
        let numeric = central_diff(params.values(), |v| {
            let mut p = params.clone();
            p.values_mut().copy_from_slice(v);
            p.regression_gradient(&obs, &store).unwrap().0
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    FdReport {
        name: "approximator",
        configs,
        max_rel_err: worst,
    }
}

pub fn all_checks(seed: u64) -> Vec<FdReport> {
    vec![
        mlp_nll(seed, 40),
        mlp_mse(seed + 1, 30),
        mlp_dropout(seed + 2, 15),
        lstm(seed + 3, 20),
        approximator(seed + 4, 15),
    ]
}
