//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one model. Gradients arrive as `(weight, bias)` pairs
/// in layer order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Parameter(format!(
                    "invalid adam parameters beta1={beta1} beta2={beta2} eps={eps}"
                )));
            }
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step(&mut self, model: &mut Model, grads: &[(Tensor, Tensor)]) -> Result<()> {
        let layers = model.layers_mut();
        if grads.len() != layers.len() {
            return Err(Error::Consistency(format!(
                "{} gradient pairs for {} layers",
                grads.len(),
                layers.len()
            )));
        }
        if self.first.is_empty() {
            for layer in layers.iter() {
                for p in [&layer.weight, &layer.bias] {
                    self.first.push(vec![0.0; p.len()]);
                    self.second.push(vec![0.0; p.len()]);
                }
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        let mut slot = 0;
        for (layer, (gw, gb)) in layers.iter_mut().zip(grads) {
            for (param, grad) in [(&mut layer.weight, gw), (&mut layer.bias, gb)] {
                let values = param.data_mut();
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (p, g) in values.iter_mut().zip(grad.data()) {
                            *p -= lr * g;
                        }
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        let bc1 = 1.0 - beta1.powi(self.step as i32);
                        let bc2 = 1.0 - beta2.powi(self.step as i32);
                        let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                        for (((p, &g), m), v) in
                            values.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut())
                        {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / bc1;
                            let v_hat = *v / bc2;
                            *p -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                }
                slot += 1;
            }
        }
        Ok(())
    }
}
