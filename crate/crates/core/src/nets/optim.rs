use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub t: u64,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    /// Applies one update for every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.t += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let n = grads.global_norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let Some(p) = params.tensors.get_mut(name) else {
                continue;
            };
            let m = self.m.tensors.entry(name.clone()).or_insert_with(|| g.clone().tap_zero());
            let v = self.v.tensors.entry(name.clone()).or_insert_with(|| g.clone().tap_zero());
            for i in 0..p.data.len() {
                let gi = g.data[i] * scale;
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

trait TapZero {
    fn tap_zero(self) -> Self;
}

impl TapZero for super::tensor::Tensor {
    fn tap_zero(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self
    }
}
