use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-a..=a)).collect()
}

/// Affine map over the last axis. Weights are `out x in`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights uniform in ±1/sqrt(in_dim), zero bias.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: uniform(rng, in_dim * out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    pub(crate) fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.last_dim() != self.in_dim || x.rank() == 0 {
            return Err(Error::invalid(format!(
                "linear layer expects last dim {}, got shape {:?}",
                self.in_dim,
                x.dims()
            )));
        }
        let rows = x.len() / self.in_dim;
        let mut data = vec![0.0; rows * self.out_dim];
        for (xr, or) in x
            .data()
            .chunks_exact(self.in_dim)
            .zip(data.chunks_exact_mut(self.out_dim))
        {
            self.apply_row(xr, or);
        }
        let mut dims = x.dims().to_vec();
        *dims.last_mut().unwrap() = self.out_dim;
        let t = Tensor::from_parts(dims, data);
        t.check_finite("linear output")?;
        Ok(t)
    }
}

/// Normalization over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub(crate) fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + self.eps).sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - mean) * inv * self.gamma[i] + self.beta[i];
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.last_dim() != self.dim || x.rank() == 0 {
            return Err(Error::invalid(format!(
                "layer norm expects last dim {}, got shape {:?}",
                self.dim,
                x.dims()
            )));
        }
        let mut data = vec![0.0; x.len()];
        for (xr, or) in x.data().chunks_exact(self.dim).zip(data.chunks_exact_mut(self.dim)) {
            self.apply_row(xr, or);
        }
        Ok(Tensor::from_parts(x.dims().to_vec(), data))
    }
}

/// 3x3 convolution with zero padding 1 over an `(h, w, c)` map.
/// Weights are laid out `[out][ky][kx][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn random(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            c_in,
            c_out,
            weight: uniform(rng, c_out * 9 * c_in, 9 * c_in),
            bias: vec![0.0; c_out],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let &[h, w, c] = x.dims() else {
            return Err(Error::invalid(format!("conv expects (h, w, c), got {:?}", x.dims())));
        };
        if c != self.c_in {
            return Err(Error::invalid(format!("conv expects {} channels, got {c}", self.c_in)));
        }
        let src = x.data();
        let mut out = vec![0.0; h * w * self.c_out];
        let mut patch = vec![0.0; 9 * c];
        for i in 0..h {
            for j in 0..w {
                patch.fill(0.0);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (yi, xj) = (i + ky, j + kx);
                        if yi < 1 || xj < 1 || yi > h || xj > w {
                            continue;
                        }
                        let s = ((yi - 1) * w + (xj - 1)) * c;
                        let d = (ky * 3 + kx) * c;
                        patch[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
                let o = &mut out[(i * w + j) * self.c_out..(i * w + j + 1) * self.c_out];
                for (oc, v) in o.iter_mut().enumerate() {
                    let wrow = &self.weight[oc * 9 * c..(oc + 1) * 9 * c];
                    *v = wrow.iter().zip(&patch).map(|(a, b)| a * b).sum::<f64>() + self.bias[oc];
                }
            }
        }
        Ok(Tensor::from_parts(vec![h, w, self.c_out], out))
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// 2x2 max pooling with stride 2 over an `(h, w, c)` map; h and w must be even.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let &[h, w, c] = x.dims() else {
        return Err(Error::invalid(format!("pool expects (h, w, c), got {:?}", x.dims())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("pool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for i in 0..h {
        for j in 0..w {
            let o = ((i / 2) * ow + j / 2) * c;
            let s = (i * w + j) * c;
            for k in 0..c {
                out[o + k] = out[o + k].max(src[s + k]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}
