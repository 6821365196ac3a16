use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Serializable optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.kind == OptimizerKind::Adam {
            for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(b > 0.0 && b < 1.0) {
                    return Err(format!("{name} {b} must lie in (0, 1)"));
                }
            }
            if !(self.epsilon > 0.0) {
                return Err(format!("epsilon {} must be > 0", self.epsilon));
            }
        }
        Ok(())
    }

    pub fn build(&self, num_params: usize) -> OptimizerState {
        match self.kind {
            OptimizerKind::Sgd => OptimizerState::sgd(self.learning_rate),
            OptimizerKind::Adam => OptimizerState::adam(
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                num_params,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Sgd,
    Adam(AdamMoments),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub method: Method,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            method: Method::Sgd,
        }
    }

    pub fn adam(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        num_params: usize,
    ) -> Self {
        OptimizerState {
            learning_rate,
            method: Method::Adam(AdamMoments {
                beta1,
                beta2,
                epsilon,
                step: 0,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
            }),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self.method {
            Method::Sgd => OptimizerKind::Sgd,
            Method::Adam(_) => OptimizerKind::Adam,
        }
    }

    /// Applies whichever update rule this state holds.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self.method {
            Method::Sgd => sgd_step(params, grad, self),
            Method::Adam(_) => adam_step(params, grad, self),
        }
    }
}

/// `θ ← θ − η·g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], state: &OptimizerState) -> Result<()> {
    if !matches!(state.method, Method::Sgd) {
        return Err(Error::OptimizerKind { expected: "sgd" });
    }
    check_len("gradient", params.len(), grad.len())?;
    let lr = state.learning_rate;
    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    let lr = state.learning_rate;
    let Method::Adam(adam) = &mut state.method else {
        return Err(Error::OptimizerKind { expected: "adam" });
    };
    check_len("gradient", params.len(), grad.len())?;
    check_len("adam moments", params.len(), adam.m.len())?;
    adam.step += 1;
    let t = adam.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g;
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * g * g;
        let m_hat = adam.m[i] / c1;
        let v_hat = adam.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + adam.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_basics() {
        let state = OptimizerState::sgd(1.0);
        let mut p = vec![1.0, -2.0, 3.0];
        sgd_step(&mut p, &[0.0; 3], &state).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        let g = p.clone();
        sgd_step(&mut p, &g, &state).unwrap();
        assert_eq!(p, vec![0.0; 3]);
        assert!(sgd_step(&mut p, &[1.0], &state).is_err());
    }

    #[test]
    fn sgd_steps_compose() {
        let state = OptimizerState::sgd(0.5);
        let (g1, g2) = ([1.0, 2.0], [-0.5, 4.0]);
        let mut a = vec![0.25, 0.75];
        sgd_step(&mut a, &g1, &state).unwrap();
        sgd_step(&mut a, &g2, &state).unwrap();
        let mut b = vec![0.25, 0.75];
        sgd_step(&mut b, &[g1[0] + g2[0], g1[1] + g2[1]], &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let mut adam = OptimizerState::adam(0.1, 0.9, 0.999, 1e-8, 1);
        assert!(sgd_step(&mut [0.0], &[1.0], &adam).is_err());
        let mut sgd = OptimizerState::sgd(0.1);
        assert!(adam_step(&mut [0.0], &[1.0], &mut sgd).is_err());
        assert!(adam.step(&mut [0.0], &[1.0]).is_ok());
    }

    #[test]
    fn adam_zero_grad_fresh_state() {
        let mut state = OptimizerState::adam(0.1, 0.9, 0.999, 1e-8, 2);
        let mut p = vec![1.0, 2.0];
        adam_step(&mut p, &[0.0, 0.0], &mut state).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        let Method::Adam(m) = &state.method else {
            unreachable!()
        };
        assert_eq!(m.step, 1);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let lr = 0.01;
        let eps = 1e-8;
        for g in [3.0, -0.002, 1e4] {
            let mut state = OptimizerState::adam(lr, 0.9, 0.999, eps, 1);
            let mut p = vec![0.0];
            adam_step(&mut p, &[g], &mut state).unwrap();
            let expected = lr * g.abs() / (g.abs() + eps);
            assert!((p[0].abs() - expected).abs() < 1e-15);
            assert!((p[0].abs() - lr).abs() < 1e-7);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_matches_scalar_reference() {
        // independent scalar transcription of the published update rule
        let (lr, b1, b2, eps, g) = (0.05, 0.8, 0.95, 1e-6, 0.7);
        let mut theta = 1.5;
        let (mut m, mut v) = (0.0, 0.0);
        let mut reference = Vec::new();
        for t in 1..=5 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            theta -= lr * mh / (vh.sqrt() + eps);
            reference.push(theta);
        }
        let mut state = OptimizerState::adam(lr, b1, b2, eps, 1);
        let mut p = vec![1.5];
        for r in reference {
            adam_step(&mut p, &[g], &mut state).unwrap();
            assert!((p[0] - r).abs() < 1e-12);
        }
    }
}
