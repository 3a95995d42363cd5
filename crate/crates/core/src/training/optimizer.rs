use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Update rule plus its per-parameter state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &Model) -> Self {
        let zeros = || -> Vec<Vec<f64>> {
            match kind {
                OptimizerKind::Adam => model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients stored on `model`'s parameters.
    /// Returns the number of scalars visited.
    pub fn step(&mut self, model: &mut Model) -> Result<usize> {
        self.step = self.step.saturating_add(1);
        let (bc1, bc2) = (1.0 - BETA1.powi(self.step), 1.0 - BETA2.powi(self.step));
        let mut touched = 0;
        for (i, p) in model.params_mut().enumerate() {
            let grad = p
                .grad()
                .ok_or_else(|| Error::shape("optimizer step without gradients"))?
                .to_vec();
            let lr = self.lr;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.data_mut().iter_mut().zip(&grad) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (((w, g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
            touched += grad.len();
        }
        Ok(touched)
    }
}
