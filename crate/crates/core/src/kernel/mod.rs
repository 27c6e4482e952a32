//! Forward math of the temporal BEV refinement network at toy scale, plus the
//! supervision losses with analytic gradients.

pub mod attention;
pub mod check;
pub mod encoder;
pub mod layers;
pub mod loss;
pub mod split;
pub mod tensor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{
    bev_attention, dualflow_fuse, pillar_attention, scaled_dot_product, BevAttention, DualFlowBlock, DualFlowFuse,
    PillarAttention,
};
pub use encoder::{bev_encode, one_hot_bev, BevEncoder, BEV_CHANNELS};
pub use layers::{Conv3x3, LayerNorm, Linear};
pub use loss::{ce_loss, lovasz_grad, lovasz_loss, softmax, ssc_loss, SscLoss};
pub use split::{extract_patches, soft_composite, soft_split, SplitGeometry};
pub use tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub patch: (usize, usize),
    pub stride: (usize, usize),
    /// Local frames around the target.
    pub t_local: usize,
    /// Reference frames sampled from the wider radius.
    pub t_ref: usize,
    /// Radius, in frames, that reference frames are drawn from.
    pub ref_radius: usize,
    pub c_e: usize,
    pub heads: usize,
    /// Height slots per pillar token.
    pub w_z: usize,
    pub blocks: usize,
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            patch: (7, 7),
            stride: (3, 3),
            t_local: 4,
            t_ref: 2,
            ref_radius: 10,
            c_e: 256,
            heads: 8,
            w_z: 32,
            blocks: 2,
            seed: 0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 || self.stride.0 > self.patch.0 || self.stride.1 > self.patch.1 {
            return Err(Error::Config(format!(
                "stride {:?} must be positive and <= patch {:?}",
                self.stride, self.patch
            )));
        }
        if self.heads == 0 || !self.c_e.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("c_e {} not divisible by {} heads", self.c_e, self.heads)));
        }
        if self.w_z == 0 || !self.c_e.is_multiple_of(self.w_z) {
            return Err(Error::Config(format!("c_e {} not divisible by w_z {}", self.c_e, self.w_z)));
        }
        if self.t_local + self.t_ref == 0 {
            return Err(Error::Config("need at least one frame".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.t_local + self.t_ref
    }

    /// Frame indices fed to the model for `target` in a sequence of `len`
    /// frames: `t_local` consecutive frames around the target, then `t_ref`
    /// distinct frames drawn uniformly from the rest of `target ± ref_radius`.
    pub fn select_frames(&self, target: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if target >= len || self.t_local > len {
            return Err(Error::invalid(format!(
                "cannot take {} local frames around {target} of {len}",
                self.t_local
            )));
        }
        let start = target.saturating_sub(self.t_local.saturating_sub(1) / 2).min(len - self.t_local);
        let local: Vec<usize> = (start..start + self.t_local).collect();
        let lo = target.saturating_sub(self.ref_radius);
        let hi = (target + self.ref_radius).min(len - 1);
        let pool: Vec<usize> = (lo..=hi).filter(|i| !local.contains(i)).collect();
        if pool.len() < self.t_ref {
            return Err(Error::invalid(format!(
                "only {} frames within radius {} for {} reference frames",
                pool.len(),
                self.ref_radius,
                self.t_ref
            )));
        }
        let mut refs: Vec<usize> = pool.choose_multiple(rng, self.t_ref).copied().collect();
        refs.sort_unstable();
        Ok(local.into_iter().chain(refs).collect())
    }
}

/// Coordinate encoder, soft split and a stack of dual-branch blocks over
/// encoded BEV features of `t_local + t_ref` frames.
#[derive(Clone, Debug)]
pub struct DualFlow4d {
    pub config: KernelConfig,
    pub coord_embed: Linear,
    pub split_proj: Linear,
    pub blocks: Vec<DualFlowBlock>,
}

impl DualFlow4d {
    pub fn new(config: KernelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let coord_embed = Linear::random(2, BEV_CHANNELS, &mut rng);
        let split_proj = Linear::random(config.patch.0 * config.patch.1 * BEV_CHANNELS, config.c_e, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| DualFlowBlock::new(config.c_e, config.heads, config.w_z, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            coord_embed,
            split_proj,
            blocks,
        })
    }

    /// Normalized pixel-center coordinates `(T, h, w, 2)` embedded to 80 channels.
    pub fn coordinates(&self, t: usize, h: usize, w: usize) -> Result<Tensor> {
        let raw = Tensor::from_fn(vec![t, h, w, 2], |i| {
            let pix = (i / 2) % (h * w);
            if i % 2 == 0 {
                ((pix / w) as f64 + 0.5) / h as f64
            } else {
                ((pix % w) as f64 + 0.5) / w as f64
            }
        });
        self.coord_embed.forward(&raw)
    }

    /// `(T, h, w, 80)` features with local frames first, reference frames
    /// after, to `(T, gh, gw, c_e)` tokens.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let &[t, h, w, c] = features.dims() else {
            return Err(Error::invalid(format!("expected (T, h, w, 80), got {:?}", features.dims())));
        };
        if t != self.config.frames() || c != BEV_CHANNELS {
            return Err(Error::invalid(format!(
                "expected ({}, h, w, {BEV_CHANNELS}) features, got {:?}",
                self.config.frames(),
                features.dims()
            )));
        }
        let geom = SplitGeometry::new(h, w, self.config.patch, self.config.stride)?;
        let coords = self.coordinates(t, h, w)?;
        let mut z = soft_split(features, &coords, &geom, &self.split_proj)?;
        for b in &self.blocks {
            z = b.forward(&z)?;
        }
        Ok(z)
    }
}
