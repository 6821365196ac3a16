//! Single-layer LSTM returning the final hidden state, with backpropagation
//! through time.

use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{check_len, Result};

/// Dimensions of an LSTM layer.
///
/// Parameter layout: a row-major `4H x (I + H)` weight matrix whose row
/// blocks are the input, forget, output and candidate gates (in that
/// order), acting on `[x_t; h_{t-1}]`, followed by the `4H` gate biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmShape {
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmShape {
    pub fn new(input_size: usize, hidden_size: usize) -> Self {
        LstmShape {
            input_size,
            hidden_size,
        }
    }

    fn concat(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn weight_len(&self) -> usize {
        4 * self.hidden_size * self.concat()
    }

    pub fn num_params(&self) -> usize {
        self.weight_len() + 4 * self.hidden_size
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let (w, b) = params.split_at_mut(self.weight_len());
        glorot_uniform(w, self.concat(), 4 * self.hidden_size, rng);
        b.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Runs the recurrence from a zero state and returns the last hidden
    /// state. An empty sequence yields zeros.
    pub fn forward(&self, params: &[f64], sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(params, sequence)?;
        Ok(trace.final_hidden(self.hidden_size))
    }

    pub fn forward_trace(&self, params: &[f64], sequence: &[Vec<f64>]) -> Result<LstmTrace> {
        check_len("lstm parameters", self.num_params(), params.len())?;
        let h_size = self.hidden_size;
        let cat = self.concat();
        let (w, b) = params.split_at(self.weight_len());
        let mut steps = Vec::with_capacity(sequence.len());
        let mut h = vec![0.0; h_size];
        let mut c = vec![0.0; h_size];
        for x in sequence {
            check_len("lstm input", self.input_size, x.len())?;
            let mut xh = Vec::with_capacity(cat);
            xh.extend_from_slice(x);
            xh.extend_from_slice(&h);
            let mut gates = vec![0.0; 4 * h_size];
            for (r, gate) in gates.iter_mut().enumerate() {
                let row = &w[r * cat..(r + 1) * cat];
                *gate = b[r] + row.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>();
            }
            for j in 0..h_size {
                gates[j] = sigmoid(gates[j]);
                gates[h_size + j] = sigmoid(gates[h_size + j]);
                gates[2 * h_size + j] = sigmoid(gates[2 * h_size + j]);
                gates[3 * h_size + j] = gates[3 * h_size + j].tanh();
            }
            let c_prev = c.clone();
            let mut tanh_c = vec![0.0; h_size];
            for j in 0..h_size {
                let (i, f, o, g) = (
                    gates[j],
                    gates[h_size + j],
                    gates[2 * h_size + j],
                    gates[3 * h_size + j],
                );
                c[j] = f * c_prev[j] + i * g;
                tanh_c[j] = c[j].tanh();
                h[j] = o * tanh_c[j];
            }
            steps.push(Step {
                xh,
                gates,
                c_prev,
                tanh_c,
                h: h.clone(),
            });
        }
        Ok(LstmTrace { steps })
    }

    /// Backpropagates `d_hidden` (gradient of a scalar w.r.t. the final
    /// hidden state) through the trace, adding into `grad` (same layout as
    /// the parameters). Returns the gradient w.r.t. each input element.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &LstmTrace,
        d_hidden: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<Vec<f64>>> {
        check_len("lstm parameters", self.num_params(), params.len())?;
        check_len("lstm gradient", self.num_params(), grad.len())?;
        check_len("lstm hidden gradient", self.hidden_size, d_hidden.len())?;
        let h_size = self.hidden_size;
        let cat = self.concat();
        let w = &params[..self.weight_len()];
        let (gw, gb) = grad.split_at_mut(self.weight_len());
        let mut dh = d_hidden.to_vec();
        let mut dc = vec![0.0; h_size];
        let mut d_inputs = vec![Vec::new(); trace.steps.len()];
        let mut dz = vec![0.0; 4 * h_size];
        for (t, step) in trace.steps.iter().enumerate().rev() {
            for j in 0..h_size {
                let (i, f, o, g) = (
                    step.gates[j],
                    step.gates[h_size + j],
                    step.gates[2 * h_size + j],
                    step.gates[3 * h_size + j],
                );
                let tc = step.tanh_c[j];
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * g * i * (1.0 - i);
                dz[h_size + j] = dcj * step.c_prev[j] * f * (1.0 - f);
                dz[2 * h_size + j] = d_o * o * (1.0 - o);
                dz[3 * h_size + j] = dcj * i * (1.0 - g * g);
                dc[j] = dcj * f;
            }
            let mut dxh = vec![0.0; cat];
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let grow = &mut gw[r * cat..(r + 1) * cat];
                grow.iter_mut().zip(&step.xh).for_each(|(g, a)| *g += d * a);
                let row = &w[r * cat..(r + 1) * cat];
                dxh.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
            dh.copy_from_slice(&dxh[self.input_size..]);
            dxh.truncate(self.input_size);
            d_inputs[t] = dxh;
        }
        Ok(d_inputs)
    }
}

pub struct LstmTrace {
    steps: Vec<Step>,
}

impl LstmTrace {
    pub fn final_hidden(&self, hidden_size: usize) -> Vec<f64> {
        self.steps
            .last()
            .map(|s| s.h.clone())
            .unwrap_or_else(|| vec![0.0; hidden_size])
    }
}

struct Step {
    xh: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// An LSTM layer that owns its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub shape: LstmShape,
    pub values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        LstmParams {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    pub fn init<R: Rng + ?Sized>(shape: LstmShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        shape.init(&mut p.values, rng);
        p
    }

    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.shape.forward(&self.values, sequence)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
