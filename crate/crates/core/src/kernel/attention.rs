use rand_chacha::ChaCha8Rng;

use super::layers::{LayerNorm, Linear};
use super::tensor::{softmax_rows, Tensor};
use crate::error::{Error, Result};

/// Single-head scaled dot-product attention `Softmax(Q K^T / sqrt(d)) V`.
/// `q` is `n_q x d`, `k` is `n_k x d`, `v` is `n_k x dv`. Returns the
/// `n_q x dv` output and the `n_q x n_k` attention weights.
pub fn scaled_dot_product(q: &[f64], k: &[f64], v: &[f64], d: usize, dv: usize) -> (Vec<f64>, Vec<f64>) {
    let n_q = q.len() / d;
    let n_k = k.len() / d;
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![0.0; n_q * n_k];
    for i in 0..n_q {
        let qi = &q[i * d..(i + 1) * d];
        for j in 0..n_k {
            let kj = &k[j * d..(j + 1) * d];
            weights[i * n_k + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
    }
    softmax_rows(&mut weights, n_k);
    let mut out = vec![0.0; n_q * dv];
    for i in 0..n_q {
        for j in 0..n_k {
            let a = weights[i * n_k + j];
            for (o, x) in out[i * dv..(i + 1) * dv].iter_mut().zip(&v[j * dv..(j + 1) * dv]) {
                *o += a * x;
            }
        }
    }
    (out, weights)
}

/// Layer norm, joint QKV projection, dense multi-head attention over every
/// token, residual add.
#[derive(Clone, Debug)]
pub struct BevAttention {
    pub heads: usize,
    pub norm: LayerNorm,
    pub qkv: Linear,
}

impl BevAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("embed dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            norm: LayerNorm::new(dim),
            qkv: Linear::random(dim, 3 * dim, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.norm.dim
    }

    /// Output with the same shape as `p`, plus per-head `N x N` attention
    /// weights where `N` is the number of tokens (all leading axes).
    pub fn forward_with_weights(&self, p: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let c = self.dim();
        if p.last_dim() != c || p.rank() == 0 {
            return Err(Error::invalid(format!("bev attention expects dim {c}, got {:?}", p.dims())));
        }
        let n = p.len() / c;
        let qkv = self.qkv.forward(&self.norm.forward(p)?)?;
        let dh = c / self.heads;
        let mut out = p.data().to_vec();
        let mut all_weights = Vec::with_capacity(self.heads);
        let gather = |part: usize, h: usize| -> Vec<f64> {
            qkv.data()
                .chunks_exact(3 * c)
                .flat_map(|row| &row[part * c + h * dh..part * c + (h + 1) * dh])
                .copied()
                .collect()
        };
        for h in 0..self.heads {
            let (o, w) = scaled_dot_product(&gather(0, h), &gather(1, h), &gather(2, h), dh, dh);
            for t in 0..n {
                for (dst, src) in out[t * c + h * dh..t * c + (h + 1) * dh]
                    .iter_mut()
                    .zip(&o[t * dh..(t + 1) * dh])
                {
                    *dst += src;
                }
            }
            all_weights.push(w);
        }
        let z = Tensor::from_parts(p.dims().to_vec(), out);
        z.check_finite("bev attention output")?;
        Ok((z, all_weights))
    }
}

pub fn bev_attention(attn: &BevAttention, p: &Tensor) -> Result<Tensor> {
    attn.forward_with_weights(p).map(|(z, _)| z)
}

/// Attention along the height axis. Each `c_e` token is split into `w_z`
/// slots of `c_e / w_z` channels; at every BEV location the slots of all
/// frames attend to each other.
#[derive(Clone, Debug)]
pub struct PillarAttention {
    pub w_z: usize,
    pub norm: LayerNorm,
    pub qkv: Linear,
}

impl PillarAttention {
    pub fn new(dim: usize, w_z: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if w_z == 0 || !dim.is_multiple_of(w_z) {
            return Err(Error::Config(format!("embed dim {dim} not divisible by {w_z} height slots")));
        }
        let d = dim / w_z;
        Ok(Self {
            w_z,
            norm: LayerNorm::new(dim),
            qkv: Linear::random(d, 3 * d, rng),
        })
    }

    pub fn slot_dim(&self) -> usize {
        self.norm.dim / self.w_z
    }

    /// `p` is `(T, gh, gw, c_e)`. Returns `Z_z` with the same shape and the
    /// attention weights of every BEV location (`(T*w_z)^2` each).
    pub fn forward_with_weights(&self, p: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let c = self.norm.dim;
        let &[t, gh, gw, pc] = p.dims() else {
            return Err(Error::invalid(format!("pillar attention expects (T, gh, gw, c), got {:?}", p.dims())));
        };
        if pc != c {
            return Err(Error::invalid(format!("pillar attention expects dim {c}, got {pc}")));
        }
        let d = self.slot_dim();
        let normed = self.norm.forward(p)?;
        let locs = gh * gw;
        let n_tok = t * self.w_z;
        let mut out = vec![0.0; p.len()];
        let mut weights = Vec::with_capacity(locs);
        let (mut q, mut k, mut v) = (vec![0.0; n_tok * d], vec![0.0; n_tok * d], vec![0.0; n_tok * d]);
        let mut buf = vec![0.0; 3 * d];
        for loc in 0..locs {
            for f in 0..t {
                let base = (f * locs + loc) * c;
                for s in 0..self.w_z {
                    self.qkv.apply_row(&normed.data()[base + s * d..base + (s + 1) * d], &mut buf);
                    let tok = f * self.w_z + s;
                    q[tok * d..(tok + 1) * d].copy_from_slice(&buf[..d]);
                    k[tok * d..(tok + 1) * d].copy_from_slice(&buf[d..2 * d]);
                    v[tok * d..(tok + 1) * d].copy_from_slice(&buf[2 * d..]);
                }
            }
            let (o, w) = scaled_dot_product(&q, &k, &v, d, d);
            for f in 0..t {
                let base = (f * locs + loc) * c;
                let tok = f * self.w_z;
                out[base..base + c].copy_from_slice(&o[tok * d..(tok + self.w_z) * d]);
            }
            weights.push(w);
        }
        let z = Tensor::from_parts(p.dims().to_vec(), out);
        z.check_finite("pillar attention output")?;
        Ok((z, weights))
    }
}

pub fn pillar_attention(attn: &PillarAttention, p: &Tensor) -> Result<Tensor> {
    attn.forward_with_weights(p).map(|(z, _)| z)
}

/// `Z_4d = P_z(Z_z) + P_bev(Z_bev)`.
#[derive(Clone, Debug)]
pub struct DualFlowFuse {
    pub p_z: Linear,
    pub p_bev: Linear,
}

impl DualFlowFuse {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            p_z: Linear::random(dim, dim, rng),
            p_bev: Linear::random(dim, dim, rng),
        }
    }
}

pub fn dualflow_fuse(fuse: &DualFlowFuse, z_z: &Tensor, z_bev: &Tensor) -> Result<Tensor> {
    let a = fuse.p_z.forward(z_z)?;
    let b = fuse.p_bev.forward(z_bev)?;
    a.add(&b)
}

/// One block: BEV branch and pillar branch over the same tokens, fused.
#[derive(Clone, Debug)]
pub struct DualFlowBlock {
    pub bev: BevAttention,
    pub pillar: PillarAttention,
    pub fuse: DualFlowFuse,
}

impl DualFlowBlock {
    pub fn new(dim: usize, heads: usize, w_z: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            bev: BevAttention::new(dim, heads, rng)?,
            pillar: PillarAttention::new(dim, w_z, rng)?,
            fuse: DualFlowFuse::new(dim, rng),
        })
    }

    pub fn forward(&self, p: &Tensor) -> Result<Tensor> {
        let z_bev = bev_attention(&self.bev, p)?;
        let z_z = pillar_attention(&self.pillar, p)?;
        dualflow_fuse(&self.fuse, &z_z, &z_bev)
    }
}
