use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates and step count, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    state: AdamState,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { state: AdamState { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] } }
    }

    pub fn from_state(state: AdamState) -> Result<Self> {
        if state.m.len() != state.v.len() {
            return Err(Error::Shape {
                context: "optimizer state",
                expected: format!("{} second moments", state.m.len()),
                got: state.v.len().to_string(),
            });
        }
        Ok(Self { state })
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn into_state(self) -> AdamState {
        self.state
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
        let n = self.state.m.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::Shape {
                context: "adam step",
                expected: format!("{n} parameters and gradients"),
                got: format!("{} parameters, {} gradients", params.len(), grads.len()),
            });
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let AdamState { m, v, .. } = &mut self.state;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}
