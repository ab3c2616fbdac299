use serde::{Deserialize, Serialize};

use crate::policy::Mlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient steps with a fixed learning rate.
    Sgd,
    /// Adaptive moments (β1 = 0.9, β2 = 0.999).
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Option<Mlp>,
    second: Option<Mlp>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Moves `params` along `grad` (ascent).
    pub fn ascend(&mut self, params: &mut Mlp, grad: &Mlp) {
        self.apply(params, grad, 1.0);
    }

    /// Moves `params` against `grad` (descent).
    pub fn descend(&mut self, params: &mut Mlp, grad: &Mlp) {
        self.apply(params, grad, -1.0);
    }

    fn apply(&mut self, params: &mut Mlp, grad: &Mlp, sign: f64) {
        self.step += 1;
        params.version += 1;
        match self.kind {
            OptimizerKind::Sgd => params.scaled_add(sign * self.lr, grad),
            OptimizerKind::Adam => {
                let m = self.first.get_or_insert_with(|| grad.zeros_like());
                let v = self.second.get_or_insert_with(|| grad.zeros_like());
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                let step = sign * self.lr;
                for (((p, g), m), v) in params
                    .params_mut()
                    .zip(grad.params())
                    .zip(m.params_mut())
                    .zip(v.params_mut())
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p += step * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
