use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// Per-channel softmax over spatial positions, reduced to the expected
/// normalized coordinate along each axis (`−1` at index 0, `+1` at the last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialSoftmax {
    pub temperature: f64,
}

impl Default for SpatialSoftmax {
    fn default() -> Self {
        SpatialSoftmax { temperature: 1.0 }
    }
}

fn axis_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Normalized coordinates of every spatial position, axis-major.
fn coordinates(dims: &[usize]) -> Vec<Vec<f64>> {
    let np: usize = dims.iter().product();
    let mut coords = vec![vec![0.0; np]; dims.len()];
    for p in 0..np {
        let mut rem = p;
        for a in (0..dims.len()).rev() {
            coords[a][p] = axis_coord(rem % dims[a], dims[a]);
            rem /= dims[a];
        }
    }
    coords
}

impl SpatialSoftmax {
    pub fn new(temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        SpatialSoftmax { temperature }
    }

    pub fn output_len(channels: usize, spatial: usize) -> usize {
        channels * spatial
    }

    /// `[B, C, d1..dn] → [B, C·n]`, ordered `[c0 axis0, c0 axis1, …, c1 axis0, …]`.
    /// Also returns the softmax probabilities for the backward pass.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        if x.shape.len() < 3 {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                got: x.shape.clone(),
            });
        }
        let (b, c) = (x.shape[0], x.shape[1]);
        let dims = &x.shape[2..];
        let nd = dims.len();
        let np: usize = dims.iter().product();
        let coords = coordinates(dims);
        let mut probs = vec![0.0; x.len()];
        let mut y = Tensor::zeros(&[b, c * nd]);
        for bc in 0..b * c {
            let logits = &x.data[bc * np..(bc + 1) * np];
            let p = &mut probs[bc * np..(bc + 1) * np];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (pi, l) in p.iter_mut().zip(logits) {
                *pi = ((l - max) / self.temperature).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|v| *v /= z);
            for a in 0..nd {
                y.data[bc * nd + a] = p.iter().zip(&coords[a]).map(|(p, c)| p * c).sum();
            }
        }
        Ok((y, probs))
    }

    pub fn backward(&self, in_shape: &[usize], probs: &[f64], y: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (b, c) = (in_shape[0], in_shape[1]);
        let dims = &in_shape[2..];
        let nd = dims.len();
        let np: usize = dims.iter().product();
        if probs.len() != b * c * np {
            return Err(Error::MissingCache);
        }
        let coords = coordinates(dims);
        let mut dx = Tensor::zeros(in_shape);
        for bc in 0..b * c {
            let p = &probs[bc * np..(bc + 1) * np];
            let gy = &g.data[bc * nd..(bc + 1) * nd];
            let ey = &y.data[bc * nd..(bc + 1) * nd];
            let out = &mut dx.data[bc * np..(bc + 1) * np];
            for i in 0..np {
                let mut s = 0.0;
                for a in 0..nd {
                    s += gy[a] * (coords[a][i] - ey[a]);
                }
                out[i] = p[i] * s / self.temperature;
            }
        }
        Ok(dx)
    }
}
