//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { learning_rate }
            | OptimizerConfig::Adam { learning_rate, .. } => learning_rate,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { learning_rate }
            | OptimizerConfig::Adam { learning_rate, .. } => *learning_rate = lr,
        }
        self
    }

    /// A zero learning rate is accepted and freezes the weights.
    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {lr}"
            )));
        }
        if let OptimizerConfig::Adam {
            beta1, beta2, eps, ..
        } = *self
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config(format!(
                    "adam needs betas in [0, 1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Moment estimates; empty until the first Adam step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

pub fn optimizer_step(
    weights: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} weight tensors but {} gradients",
            weights.len(),
            grads.len()
        )));
    }
    for (w, g) in weights.iter().zip(grads) {
        g.expect_shape(w.shape())?;
    }
    state.step += 1;
    match *cfg {
        OptimizerConfig::Sgd { learning_rate } => {
            let lr = learning_rate as f32;
            for (w, g) in weights.iter_mut().zip(grads) {
                for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= lr * gv;
                }
            }
        }
        OptimizerConfig::Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
        } => {
            if state.first_moment.len() != weights.len() {
                state.first_moment = weights.iter().map(|w| vec![0.0; w.len()]).collect();
                state.second_moment = state.first_moment.clone();
            }
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let (b1, b2) = (beta1 as f32, beta2 as f32);
            let (c1, c2) = ((1.0 - beta1) as f32, (1.0 - beta2) as f32);
            for (i, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
                let m = &mut state.first_moment[i];
                let v = &mut state.second_moment[i];
                for (j, (wv, &gv)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
                    m[j] = b1 * m[j] + c1 * gv;
                    v[j] = b2 * v[j] + c2 * gv * gv;
                    let m_hat = m[j] as f64 / bc1;
                    let v_hat = v[j] as f64 / bc2;
                    *wv -= (learning_rate * m_hat / (v_hat.sqrt() + eps)) as f32;
                }
            }
        }
    }
    Ok(())
}
