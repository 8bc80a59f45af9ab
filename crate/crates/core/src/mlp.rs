//! Small fully-connected networks with hand-derived reverse-mode gradients.
//!
//! All models in this crate (denoiser, encoder, decoder, attack classifier)
//! are stacks of affine layers with pointwise activations, so one exact
//! backward pass covers every training loop. Gradients are checked against
//! central finite differences in the test suite; nothing here is stochastic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    /// ln(1 + e^x), used where a predicted standard deviation must stay
    /// positive.
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation *output*; every
    /// activation here admits that form, which lets backward reuse the
    /// forward trace.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => 1.0 - (-y).exp(),
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Weight matrix, shape [fan_out, fan_in], row-major.
    pub weights: Tensor,
    /// Bias vector, shape [fan_out].
    pub bias: Tensor,
    pub activation: Activation,
}

impl LayerParams {
    pub fn fan_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

/// Per-layer (weight grad, bias grad) pairs mirroring [`MlpParams`] shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (Tensor::zeros(l.weights.shape()), Tensor::zeros(l.bias.shape())))
            .collect();
        MlpGradients { layers }
    }

    pub fn accumulate(&mut self, other: &MlpGradients) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in w.data_mut().iter_mut().zip(ow.data()) {
                *x += y;
            }
            for (x, y) in b.data_mut().iter_mut().zip(ob.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            for x in w.data_mut() {
                *x *= c;
            }
            for x in b.data_mut() {
                *x *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.all_finite() && b.all_finite())
    }
}

impl MlpParams {
    /// Fresh network with weights drawn uniformly from
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)] and zero biases. `sizes` lists the
    /// layer widths input-first; `activations` has one entry per weight
    /// layer.
    pub fn init(sizes: &[usize], activations: &[Activation], rng: &mut SeededRng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output sizes".into()));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} layer sizes want {} activations, got {}",
                sizes.len(),
                sizes.len() - 1,
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (l, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
            layers.push(LayerParams {
                weights: Tensor::new(vec![fan_out, fan_in], data)?,
                bias: Tensor::zeros(&[fan_out]),
                activation: act,
            });
        }
        Ok(MlpParams { layers })
    }

    /// Tanh hidden layers with a caller-chosen head activation.
    pub fn init_tanh(sizes: &[usize], head: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut acts = vec![Activation::Tanh; sizes.len().saturating_sub(1)];
        if let Some(last) = acts.last_mut() {
            *last = head;
        }
        MlpParams::init(sizes, &acts, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Apply the network. Input is a vector [d] or a batch [n, d]; the
    /// output keeps the leading batch dimension.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (rows, d) = split_batch(input)?;
        if d != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "input dim {} does not match network input {}",
                d,
                self.input_dim()
            )));
        }
        let out_dim = self.output_dim();
        let mut cur = input.data().to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer_forward_batch(layer, &cur, rows, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        let out = if input.shape().len() == 2 {
            Tensor::new(vec![rows, out_dim], cur)?
        } else {
            Tensor::new(vec![out_dim], cur)?
        };
        debug_assert!(out.all_finite(), "non-finite activation");
        Ok(out)
    }

    /// Exact reverse-mode gradients of `sum(upstream .* output)` with
    /// respect to every parameter and to the input. `upstream` must match
    /// the output shape that `apply` would produce for `input`.
    pub fn grad(&self, input: &Tensor, upstream: &Tensor) -> Result<(MlpGradients, Tensor)> {
        let (rows, d) = split_batch(input)?;
        if d != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "input dim {} does not match network input {}",
                d,
                self.input_dim()
            )));
        }
        let out_dim = self.output_dim();
        let expected: &[usize] =
            if input.shape().len() == 2 { &[rows, out_dim] } else { &[out_dim] };
        if upstream.shape() != expected {
            return Err(Error::InvalidArgument(format!(
                "upstream shape {:?} does not match output shape {:?}",
                upstream.shape(),
                expected
            )));
        }

        // Forward once over the whole batch, keeping each layer's
        // post-activations for the backward sweep.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.data().to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer_forward_batch(layer, acts.last().expect("non-empty"), rows, &mut out);
            acts.push(out);
        }

        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = upstream.data().to_vec();
        let mut prev = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
            let out_act = &acts[l + 1];
            let in_act = &acts[l];
            // delta currently holds dL/da_l; fold in the activation.
            for (dz, &y) in delta.iter_mut().zip(out_act.iter()) {
                *dz *= layer.activation.derivative_from_output(y);
            }
            let (wg, bg) = &mut grads.layers[l];
            let wg = wg.data_mut();
            let bg = bg.data_mut();
            let w = layer.weights.data();
            prev.clear();
            prev.resize(rows * fan_in, 0.0);
            for r in 0..rows {
                let drow = &delta[r * fan_out..(r + 1) * fan_out];
                let arow = &in_act[r * fan_in..(r + 1) * fan_in];
                let prow = &mut prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    bg[o] += drow[o];
                    axpy(drow[o], arow, &mut wg[o * fan_in..(o + 1) * fan_in]);
                    // dL/da_{l-1} = W^T delta
                    axpy(drow[o], &w[o * fan_in..(o + 1) * fan_in], prow);
                }
            }
            std::mem::swap(&mut delta, &mut prev);
        }
        let input_grad = if input.shape().len() == 2 {
            Tensor::new(vec![rows, d], delta)?
        } else {
            Tensor::new(vec![d], delta)?
        };
        Ok((grads, input_grad))
    }
}

/// One layer over a whole batch: out row r = act(W a_r + b).
fn layer_forward_batch(layer: &LayerParams, input: &[f64], rows: usize, out: &mut Vec<f64>) {
    let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
    let w = layer.weights.data();
    let b = layer.bias.data();
    out.clear();
    out.reserve(rows * fan_out);
    for r in 0..rows {
        let a = &input[r * fan_in..(r + 1) * fan_in];
        for o in 0..fan_out {
            let z = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], a);
            out.push(layer.activation.apply(z));
        }
    }
}

/// Four-lane dot product. Independent accumulators keep the multiply-add
/// chain from serializing; training spends most of its time here.
fn dot(w: &[f64], a: &[f64]) -> f64 {
    let mut wc = w.chunks_exact(4);
    let mut ac = a.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (cw, ca) in (&mut wc).zip(&mut ac) {
        s0 += cw[0] * ca[0];
        s1 += cw[1] * ca[1];
        s2 += cw[2] * ca[2];
        s3 += cw[3] * ca[3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for (wv, av) in wc.remainder().iter().zip(ac.remainder()) {
        s += wv * av;
    }
    s
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += c * xv;
    }
}

/// Interpret a tensor as (rows, row_dim): [d] is one row, [n, d] is n rows.
fn split_batch(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [d] => Ok((1, *d)),
        [n, d] => Ok((*n, *d)),
        other => Err(Error::InvalidArgument(format!(
            "expected a vector or a batch of vectors, got shape {other:?}"
        ))),
    }
}
