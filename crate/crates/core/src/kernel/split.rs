use super::layers::Linear;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Overlapping patch layout over an `h x w` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitGeometry {
    pub h: usize,
    pub w: usize,
    pub patch: (usize, usize),
    pub stride: (usize, usize),
}

impl SplitGeometry {
    /// Patches must tile the map exactly: `(h - patch) % stride == 0` per axis.
    pub fn new(h: usize, w: usize, patch: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        let axis = |n: usize, p: usize, s: usize, name: &str| -> Result<()> {
            if p == 0 || s == 0 || s > p {
                return Err(Error::Config(format!("{name}: need 0 < stride {s} <= patch {p}")));
            }
            if n < p || !(n - p).is_multiple_of(s) {
                return Err(Error::invalid(format!(
                    "{name}: patch {p} with stride {s} does not tile extent {n}"
                )));
            }
            Ok(())
        };
        axis(h, patch.0, stride.0, "height")?;
        axis(w, patch.1, stride.1, "width")?;
        Ok(Self { h, w, patch, stride })
    }

    pub fn grid(&self) -> (usize, usize) {
        (
            (self.h - self.patch.0) / self.stride.0 + 1,
            (self.w - self.patch.1) / self.stride.1 + 1,
        )
    }

    pub fn num_tokens(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    pub fn patch_area(&self) -> usize {
        self.patch.0 * self.patch.1
    }

    /// Number of patches covering each pixel, row-major `h x w`.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.h * self.w];
        let (gh, gw) = self.grid();
        for pi in 0..gh {
            for pj in 0..gw {
                for di in 0..self.patch.0 {
                    for dj in 0..self.patch.1 {
                        cov[(pi * self.stride.0 + di) * self.w + pj * self.stride.1 + dj] += 1;
                    }
                }
            }
        }
        cov
    }
}

/// `(T, h, w, c)` -> `(T, gh, gw, ph*pw*c)` flattened patches, patch rows
/// outermost and channels fastest.
pub fn extract_patches(x: &Tensor, geom: &SplitGeometry) -> Result<Tensor> {
    let &[t, h, w, c] = x.dims() else {
        return Err(Error::invalid(format!("patches need (T, h, w, c), got {:?}", x.dims())));
    };
    if (h, w) != (geom.h, geom.w) {
        return Err(Error::invalid(format!(
            "split geometry is {}x{}, input is {h}x{w}",
            geom.h, geom.w
        )));
    }
    let (gh, gw) = geom.grid();
    let (ph, pw) = geom.patch;
    let tok = ph * pw * c;
    let src = x.data();
    let mut out = Vec::with_capacity(t * gh * gw * tok);
    for f in 0..t {
        for pi in 0..gh {
            for pj in 0..gw {
                for di in 0..ph {
                    let row = pi * geom.stride.0 + di;
                    let s = ((f * h + row) * w + pj * geom.stride.1) * c;
                    out.extend_from_slice(&src[s..s + pw * c]);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![t, gh, gw, tok], out))
}

/// Adds coordinate encodings to features, cuts overlapping patches and
/// projects each flattened patch with `proj`.
pub fn soft_split(features: &Tensor, coords: &Tensor, geom: &SplitGeometry, proj: &Linear) -> Result<Tensor> {
    let x = features.add(coords)?;
    let patches = extract_patches(&x, geom)?;
    if proj.in_dim != patches.last_dim() {
        return Err(Error::invalid(format!(
            "projection expects {} inputs, patches have {}",
            proj.in_dim,
            patches.last_dim()
        )));
    }
    proj.forward(&patches)
}

/// Overlap-add of flattened patch tokens `(T, gh, gw, ph*pw*c)` back to
/// `(T, h, w, c)`, normalized by per-pixel coverage.
pub fn soft_composite(tokens: &Tensor, geom: &SplitGeometry) -> Result<Tensor> {
    let &[t, gh, gw, tok] = tokens.dims() else {
        return Err(Error::invalid(format!("composite needs (T, gh, gw, d), got {:?}", tokens.dims())));
    };
    if (gh, gw) != geom.grid() || tok % geom.patch_area() != 0 {
        return Err(Error::invalid(format!(
            "tokens {:?} do not match split geometry {geom:?}",
            tokens.dims()
        )));
    }
    let c = tok / geom.patch_area();
    let (h, w) = (geom.h, geom.w);
    let (ph, pw) = geom.patch;
    let cov = geom.coverage();
    let src = tokens.data();
    let mut out = vec![0.0; t * h * w * c];
    for f in 0..t {
        for pi in 0..gh {
            for pj in 0..gw {
                let base = ((f * gh + pi) * gw + pj) * tok;
                for di in 0..ph {
                    for dj in 0..pw {
                        let s = base + (di * pw + dj) * c;
                        let d = ((f * h + pi * geom.stride.0 + di) * w + pj * geom.stride.1 + dj) * c;
                        for k in 0..c {
                            out[d + k] += src[s + k];
                        }
                    }
                }
            }
        }
        for (p, &n) in cov.iter().enumerate() {
            let d = (f * h * w + p) * c;
            for v in &mut out[d..d + c] {
                *v /= n as f64;
            }
        }
    }
    Ok(Tensor::from_parts(vec![t, h, w, c], out))
}
