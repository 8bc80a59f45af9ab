//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{MlpGradients, MlpParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

impl AdamWConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        AdamWConfig { learning_rate: lr, ..AdamWConfig::default() }
    }
}

/// First/second moment accumulators, one pair per parameter tensor,
/// mirroring the network layout exactly.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    cfg: AdamWConfig,
    step: u64,
    m: MlpGradients,
    v: MlpGradients,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, cfg: AdamWConfig) -> Self {
        OptimizerState {
            cfg,
            step: 0,
            m: MlpGradients::zeros_like(params),
            v: MlpGradients::zeros_like(params),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Weight decay is decoupled: weight matrices shrink by
    /// (1 - lr * decay) before the moment-based step, and biases are never
    /// decayed. Rejects non-finite gradients so a diverging loop stops at
    /// the step that broke instead of poisoning the parameters.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::InvalidArgument("gradient/parameter layer count mismatch".into()));
        }
        for ((wg, bg), layer) in grads.layers.iter().zip(&params.layers) {
            if wg.shape() != layer.weights.shape() || bg.shape() != layer.bias.shape() {
                return Err(Error::InvalidArgument("gradient shape mismatch".into()));
            }
        }
        if !grads.all_finite() {
            return Err(Error::Training("non-finite gradient".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);

        for (l, layer) in params.layers.iter_mut().enumerate() {
            let decay = 1.0 - c.learning_rate * c.weight_decay;
            for w in layer.weights.data_mut() {
                *w *= decay;
            }
            let (wg, bg) = &grads.layers[l];
            let (wm, bm) = &mut self.m.layers[l];
            let (wv, bv) = &mut self.v.layers[l];
            adamw_tensor(&mut layer.weights, wg, wm, wv, c, bias1, bias2);
            adamw_tensor(&mut layer.bias, bg, bm, bv, c, bias1, bias2);
        }
        Ok(())
    }
}

fn adamw_tensor(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    c: &AdamWConfig,
    bias1: f64,
    bias2: f64,
) {
    let p = param.data_mut();
    let g = grad.data();
    let m = m.data_mut();
    let v = v.data_mut();
    for i in 0..p.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
    }
}
