//! Dense, layer-norm and activation layers plus a sequential container.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Conv;
use super::softmax::SpatialSoftmax;
use super::tensor::{ParamSet, Tensor};
use crate::{Error, Result};

/// `C = alpha·op(A)·op(B) + beta·C` with row-major storage. `op` transposes
/// when the flag is set; `A` is `m×k` after `op`, `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the index ranges implied by the shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Intermediate values a layer keeps for its backward pass.
#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    pub input: Tensor,
    pub output: Tensor,
    pub aux: Vec<f64>,
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Dense {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    pub fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Fan-in scaled uniform weights, zero bias; `scale` shrinks the weights.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, scale: f64, rng: &mut R) {
        let bound = scale / (self.inputs as f64).sqrt();
        params.insert(self.w(), Tensor::uniform(&[self.outputs, self.inputs], bound, rng));
        params.insert(self.b(), Tensor::zeros(&[self.outputs]));
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let w = p.get(&self.w())?;
        let b = p.get(&self.b())?;
        let rows = x.rows();
        if x.row_len() != self.inputs {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, self.inputs],
                got: x.shape.clone(),
            });
        }
        let mut y = Tensor::zeros(&[rows, self.outputs]);
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(&b.data);
        }
        gemm(rows, self.inputs, self.outputs, 1.0, &x.data, false, &w.data, true, 1.0, &mut y.data);
        Ok(y)
    }

    pub fn backward(&self, p: &ParamSet, x: &Tensor, g: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        let w = p.get(&self.w())?;
        let rows = x.rows();
        let (i, o) = (self.inputs, self.outputs);
        grads.accumulate(&self.w(), &[o, i], |dw| {
            gemm(o, rows, i, 1.0, &g.data, true, &x.data, false, 1.0, dw);
        });
        grads.accumulate(&self.b(), &[o], |db| {
            for r in 0..rows {
                for (d, v) in db.iter_mut().zip(g.row(r)) {
                    *d += v;
                }
            }
        });
        let mut dx = Tensor::zeros(&[rows, i]);
        gemm(rows, o, i, 1.0, &g.data, false, &w.data, false, 0.0, &mut dx.data);
        Ok(dx)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes each row to zero mean and unit variance, then applies a
/// learned gain and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm { name: name.into(), dim }
    }

    pub fn gain(&self) -> String {
        format!("{}.gain", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut ParamSet) {
        params.insert(self.gain(), Tensor::filled(&[self.dim], 1.0));
        params.insert(self.bias(), Tensor::zeros(&[self.dim]));
    }

    /// Returns the output plus `(x̂, 1/σ per row)` for the backward pass.
    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let gain = p.get(&self.gain())?;
        let bias = p.get(&self.bias())?;
        let rows = x.rows();
        let d = self.dim;
        if x.row_len() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, d],
                got: x.shape.clone(),
            });
        }
        let mut xhat = Tensor::zeros(&[rows, d]);
        let mut y = Tensor::zeros(&[rows, d]);
        let mut inv = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv.push(s);
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat.data[r * d + c] = h;
                y.data[r * d + c] = h * gain.data[c] + bias.data[c];
            }
        }
        Ok((y, xhat, inv))
    }

    pub fn backward(
        &self,
        p: &ParamSet,
        xhat: &Tensor,
        inv: &[f64],
        g: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let gain = p.get(&self.gain())?;
        let rows = g.rows();
        let d = self.dim;
        grads.accumulate(&self.gain(), &[d], |dg| {
            for r in 0..rows {
                for c in 0..d {
                    dg[c] += g.data[r * d + c] * xhat.data[r * d + c];
                }
            }
        });
        grads.accumulate(&self.bias(), &[d], |db| {
            for r in 0..rows {
                for c in 0..d {
                    db[c] += g.data[r * d + c];
                }
            }
        });
        let mut dx = Tensor::zeros(&[rows, d]);
        for r in 0..rows {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for c in 0..d {
                let dh = g.data[r * d + c] * gain.data[c];
                m1 += dh;
                m2 += dh * xhat.data[r * d + c];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for c in 0..d {
                let dh = g.data[r * d + c] * gain.data[c];
                dx.data[r * d + c] = inv[r] * (dh - m1 - xhat.data[r * d + c] * m2);
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    LayerNorm(LayerNorm),
    Relu,
    Tanh,
    Conv(Conv),
    SpatialSoftmax(SpatialSoftmax),
}

impl Layer {
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        match self {
            Layer::Dense(d) => d.init(params, 1.0, rng),
            Layer::LayerNorm(l) => l.init(params),
            Layer::Conv(c) => c.init(params, rng),
            Layer::Relu | Layer::Tanh | Layer::SpatialSoftmax(_) => {}
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let mut cache = LayerCache::default();
        let out = match self {
            Layer::Dense(d) => d.forward(p, x)?,
            Layer::LayerNorm(l) => {
                let (y, xhat, inv) = l.forward(p, x)?;
                cache.aux = inv;
                cache.input = xhat;
                return Ok((y, cache));
            }
            Layer::Relu => Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
            },
            Layer::Tanh => {
                let y = Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|v| v.tanh()).collect(),
                };
                cache.output = y.clone();
                return Ok((y, cache));
            }
            Layer::Conv(c) => c.forward(p, x)?,
            Layer::SpatialSoftmax(s) => {
                let (y, probs) = s.forward(x)?;
                cache.aux = probs;
                cache.output = y.clone();
                cache.input = Tensor {
                    shape: x.shape.clone(),
                    data: Vec::new(),
                };
                return Ok((y, cache));
            }
        };
        cache.input = x.clone();
        Ok((out, cache))
    }

    pub fn backward(&self, p: &ParamSet, cache: &LayerCache, g: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(p, &cache.input, g, grads),
            Layer::LayerNorm(l) => l.backward(p, &cache.input, &cache.aux, g, grads),
            Layer::Relu => Ok(Tensor {
                shape: g.shape.clone(),
                data: g
                    .data
                    .iter()
                    .zip(&cache.input.data)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            }),
            Layer::Tanh => Ok(Tensor {
                shape: g.shape.clone(),
                data: g
                    .data
                    .iter()
                    .zip(&cache.output.data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            }),
            Layer::Conv(c) => c.backward(p, &cache.input, g, grads),
            Layer::SpatialSoftmax(s) => s.backward(&cache.input.shape, &cache.aux, &cache.output, g),
        }
    }
}

/// Forward activations of a [`Sequential`] pass.
#[derive(Clone, Debug, Default)]
pub struct SeqCache {
    pub layers: Vec<LayerCache>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<(Tensor, SeqCache)> {
        let mut cache = SeqCache {
            layers: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(p, &h)?;
            cache.layers.push(c);
            h = y;
        }
        Ok((h, cache))
    }

    /// Output only; skips the caches.
    pub fn infer(&self, p: &ParamSet, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(p, x)?.0)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, p: &ParamSet, cache: &SeqCache, g: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let mut g = g.clone();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            g = l.backward(p, c, &g, grads)?;
        }
        Ok(g)
    }
}

/// `[Dense → LayerNorm → ReLU] × hidden.len()` then a final dense layer.
pub fn mlp(name: &str, inputs: usize, hidden: &[usize], outputs: usize, layer_norm: bool) -> Sequential {
    let mut layers = Vec::new();
    let mut width = inputs;
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(format!("{name}.fc{i}"), width, h)));
        if layer_norm {
            layers.push(Layer::LayerNorm(LayerNorm::new(format!("{name}.ln{i}"), h)));
        }
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(Layer::Dense(Dense::new(format!("{name}.out"), width, outputs)));
    Sequential::new(layers)
}
