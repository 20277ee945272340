use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay:
/// `θ ← θ − lr · m̂ / (√v̂ + ε) − lr · wd · θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self {
            lr,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn update(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                op: "adam",
                left: (params.len(), grads.len()),
                right: (self.m.len(), 1),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &grad), (mi, vi)) in it {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * grad;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                let decay = self.lr * self.weight_decay * *theta;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + decay;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a metric where larger is better. Only a
/// strict improvement resets the counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn should_stop(&self) -> bool {
        self.best.is_some() && self.bad_epochs >= self.patience
    }
}
