use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{max_pool2, relu, Conv3x3, LayerNorm, Linear};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;

pub const BEV_CHANNELS: usize = 80;
const EMBED_CHANNELS: usize = 32;
const BLOCK_CHANNELS: [usize; 4] = [32, 48, 64, BEV_CHANNELS];

/// Embedding + four conv blocks, each halving the spatial resolution.
#[derive(Clone, Debug)]
pub struct BevEncoder {
    pub embed: Linear,
    pub norm: LayerNorm,
    pub blocks: Vec<[Conv3x3; 2]>,
}

impl BevEncoder {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Linear::random(in_channels, EMBED_CHANNELS, &mut rng);
        let mut c = EMBED_CHANNELS;
        let blocks = BLOCK_CHANNELS
            .iter()
            .map(|&out| {
                let pair = [Conv3x3::random(c, out, &mut rng), Conv3x3::random(out, out, &mut rng)];
                c = out;
                pair
            })
            .collect();
        Self {
            embed,
            norm: LayerNorm::new(EMBED_CHANNELS),
            blocks,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.embed.in_dim
    }

    fn encode_one(&self, x: &Tensor) -> Result<Tensor> {
        let mut f = self.norm.forward(&self.embed.forward(x)?)?;
        for [a, b] in &self.blocks {
            f = relu(&a.forward(&f)?);
            f = relu(&b.forward(&f)?);
            f = max_pool2(&f)?;
        }
        f.check_finite("bev features")?;
        Ok(f)
    }
}

/// Encodes `(nx, ny, nz*c_in)` into `(nx/16, ny/16, 80)`, or a frame batch
/// `(T, nx, ny, nz*c_in)` into `(T, nx/16, ny/16, 80)`.
pub fn bev_encode(encoder: &BevEncoder, volume: &Tensor) -> Result<Tensor> {
    let (frames, spatial) = match volume.dims() {
        [h, w, _] => (None, (*h, *w)),
        [t, h, w, _] => (Some(*t), (*h, *w)),
        d => return Err(Error::invalid(format!("bev_encode expects rank 3 or 4, got {d:?}"))),
    };
    if spatial.0 == 0 || spatial.1 == 0 || spatial.0 % 16 != 0 || spatial.1 % 16 != 0 {
        return Err(Error::invalid(format!(
            "bev_encode needs spatial dims divisible by 16, got {}x{}",
            spatial.0, spatial.1
        )));
    }
    match frames {
        None => encoder.encode_one(volume),
        Some(t) => {
            let outs = (0..t)
                .map(|i| encoder.encode_one(&volume.index_axis0(i)?))
                .collect::<Result<Vec<_>>>()?;
            let per = outs.iter().map(|o| o.dims().to_vec()).next().unwrap_or(vec![0, 0, 0]);
            let data = outs.into_iter().flat_map(Tensor::into_data).collect();
            Ok(Tensor::from_parts(vec![t, per[0], per[1], per[2]], data))
        }
    }
}

/// One-hot encodes a voxel grid into `(nx, ny, nz*(num_classes+1))`, height
/// folded into channels. Invalid voxels encode as all zeros.
pub fn one_hot_bev(grid: &VoxelGrid, num_classes: usize) -> Tensor {
    let [nx, ny, nz] = grid.spec().dims;
    let k = num_classes + 1;
    let mut data = vec![0.0; nx * ny * nz * k];
    for (lin, c) in grid.labels().iter().enumerate() {
        if c.index() < k {
            data[lin * k + c.index()] = 1.0;
        }
    }
    Tensor::from_parts(vec![nx, ny, nz * k], data)
}
