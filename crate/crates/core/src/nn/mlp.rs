//! Dense feed-forward networks with ReLU/identity activations and inverted
//! dropout, plus hand-written reverse-mode gradients.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::loss::{loss_and_output_grad, Target};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape of one dense layer and where its parameters live in the flat
/// parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub dropout: f64,
    weight_offset: usize,
    bias_offset: usize,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Description of a network used to build [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub dropout: f64,
}

/// Conventional stack: ReLU hidden layers sharing one dropout rate, then an
/// identity output layer without dropout.
pub fn standard_layers(
    input: usize,
    hidden: &[usize],
    output: usize,
    dropout: f64,
) -> Vec<LayerSpec> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    let last = sizes.len() - 2;
    sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            inputs: w[0],
            outputs: w[1],
            activation: if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            },
            dropout: if i == last { 0.0 } else { dropout },
        })
        .collect()
}

/// Parameters of a multi-layer perceptron.
///
/// All weights and biases are stored in one flat vector, layer by layer,
/// each layer as its row-major `outputs x inputs` weight matrix followed by
/// its bias. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (i, spec) in specs.iter().enumerate() {
            if i > 0 {
                check_len("layer chain", specs[i - 1].outputs, spec.inputs)?;
            }
            if spec.inputs == 0 || spec.outputs == 0 {
                return Err(Error::InvalidArgument(
                    "layer dimensions must be positive".into(),
                ));
            }
            if !(0.0..1.0).contains(&spec.dropout) {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate {} outside [0, 1)",
                    spec.dropout
                )));
            }
            let weight_offset = offset;
            let bias_offset = weight_offset + spec.inputs * spec.outputs;
            offset = bias_offset + spec.outputs;
            layers.push(Layer {
                inputs: spec.inputs,
                outputs: spec.outputs,
                activation: spec.activation,
                dropout: spec.dropout,
                weight_offset,
                bias_offset,
            });
        }
        Ok(MlpParams {
            layers,
            values: vec![0.0; offset],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(specs)?;
        for l in 0..params.layers.len() {
            let layer = params.layers[l].clone();
            let w = &mut params.values[layer.weight_offset..layer.bias_offset];
            glorot_uniform(w, layer.inputs, layer.outputs, rng);
        }
        Ok(params)
    }

    /// Builds parameters from explicit `(weight, bias)` pairs.
    pub fn from_layers(specs: &[LayerSpec], weights: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        check_len("layer count", specs.len(), weights.len())?;
        let mut params = Self::zeros(specs)?;
        for (l, (w, b)) in weights.iter().enumerate() {
            let layer = &params.layers[l];
            check_len("weight matrix", layer.inputs * layer.outputs, w.len())?;
            check_len("bias vector", layer.outputs, b.len())?;
            let (wo, bo) = (layer.weight_offset, layer.bias_offset);
            params.values[wo..bo].copy_from_slice(w);
            params.values[bo..bo + b.len()].copy_from_slice(b);
        }
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                what: "mlp parameters",
            });
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.values[l.bias_offset..l.bias_offset + l.outputs]
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

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Forward pass. Dropout is active only when `dropout_rng` is given; kept
    /// units are scaled by `1 / (1 - rate)` so evaluation needs no rescaling.
    pub fn forward(&self, x: &[f64], dropout_rng: Option<&mut dyn RngCore>) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x, dropout_rng)?.output().to_vec())
    }

    fn forward_trace(&self, x: &[f64], mut rng: Option<&mut dyn RngCore>) -> Result<Trace> {
        check_len("mlp input", self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &activations[l];
            let w = self.weight(l);
            let b = self.bias(l);
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(rng) if layer.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - layer.dropout);
                    let mask: Vec<f64> = (0..layer.outputs)
                        .map(|_| {
                            if rng.random::<f64>() < layer.dropout {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect();
                    a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    Some(mask)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            activations.push(a);
        }
        Ok(Trace {
            activations,
            pre,
            masks,
        })
    }

    /// Reverse pass for one traced sample. Adds `scale * dL/dθ` into `grad`.
    fn accumulate_grad(&self, trace: &Trace, output_grad: Vec<f64>, scale: f64, grad: &mut [f64]) {
        let mut delta = output_grad;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &trace.masks[l] {
                delta.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            let input = &trace.activations[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                let row = &mut grad[layer.weight_offset + o * layer.inputs..][..layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += sd * a);
                grad[layer.bias_offset + o] += sd;
            }
            if l > 0 {
                let w = self.weight(l);
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
                }
                delta = next;
            }
        }
    }

    /// Loss of one sample in evaluation mode.
    pub fn sample_loss(&self, x: &[f64], target: Target<'_>) -> Result<f64> {
        let out = self.forward(x, None)?;
        Ok(loss_and_output_grad(&out, target)?.0)
    }
}

struct Trace {
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    fn output(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

/// One `(input, target)` pair of a mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub input: &'a [f64],
    pub target: Target<'a>,
}

/// Result of a weighted backward pass over a mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub per_sample_losses: Vec<f64>,
    /// `(1/B) Σ α_i ∇θ L_i`, same layout as [`MlpParams::values`].
    pub gradient: Vec<f64>,
    pub weights: Vec<f64>,
    /// `‖α_i ∇θ L_i‖²` for every sample, used for in-batch variance.
    pub weighted_sq_norms: Vec<f64>,
}

/// Weighted mini-batch gradient. Each sample is forwarded once; the same
/// dropout mask feeds both its loss and its gradient.
pub fn backward(
    params: &MlpParams,
    batch: &[Example<'_>],
    weights: &[f64],
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<GradBundle> {
    check_len("batch weights", batch.len(), weights.len())?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "sample weight {w} must be finite and > 0"
        )));
    }
    let n = params.num_params();
    let inv_batch = 1.0 / batch.len() as f64;
    let mut gradient = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut losses = Vec::with_capacity(batch.len());
    let mut sq_norms = Vec::with_capacity(batch.len());
    for (i, (example, &alpha)) in batch.iter().zip(weights).enumerate() {
        let trace = params.forward_trace(
            example.input,
            dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
        )?;
        let (loss, out_grad) = loss_and_output_grad(trace.output(), example.target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                sample: i,
                value: loss,
            });
        }
        scratch.iter_mut().for_each(|g| *g = 0.0);
        params.accumulate_grad(&trace, out_grad, 1.0, &mut scratch);
        let mut sq = 0.0;
        for (acc, g) in gradient.iter_mut().zip(&scratch) {
            let weighted = alpha * g;
            sq += weighted * weighted;
            *acc += weighted;
        }
        losses.push(loss);
        sq_norms.push(sq);
    }
    gradient.iter_mut().for_each(|g| *g *= inv_batch);
    Ok(GradBundle {
        per_sample_losses: losses,
        gradient,
        weights: weights.to_vec(),
        weighted_sq_norms: sq_norms,
    })
}

/// Unweighted gradient of a single sample's loss, evaluation mode.
pub fn sample_gradient(
    params: &MlpParams,
    x: &[f64],
    target: Target<'_>,
) -> Result<(f64, Vec<f64>)> {
    let trace = params.forward_trace(x, None)?;
    let (loss, out_grad) = loss_and_output_grad(trace.output(), target)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            sample: 0,
            value: loss,
        });
    }
    let mut grad = vec![0.0; params.num_params()];
    params.accumulate_grad(&trace, out_grad, 1.0, &mut grad);
    Ok((loss, grad))
}

/// `‖∇θ L(Ψ(x; θ), y)‖₂` with dropout disabled.
pub fn per_sample_grad_norm(params: &MlpParams, x: &[f64], target: Target<'_>) -> Result<f64> {
    let (_, grad) = sample_gradient(params, x, target)?;
    Ok(grad.iter().map(|g| g * g).sum::<f64>().sqrt())
}
