//! Voxel-wise cross-entropy and Lovász-softmax losses with analytic gradients.
//! Rows are voxels, columns are classes (column 0 is free space). Voxels
//! labelled 255 are ignored.

use super::tensor::{softmax_rows, Tensor};
use crate::error::{Error, Result};
use crate::grid::ClassId;

fn check_inputs(x: &Tensor, gt: &[ClassId], what: &str) -> Result<usize> {
    let &[n, c] = x.dims() else {
        return Err(Error::invalid(format!("{what} expects (voxels, classes), got {:?}", x.dims())));
    };
    if n != gt.len() {
        return Err(Error::invalid(format!("{what}: {n} rows but {} labels", gt.len())));
    }
    if let Some(bad) = gt.iter().find(|g| !g.is_invalid() && g.index() >= c) {
        return Err(Error::invalid(format!("{what}: label {bad} outside {c} classes")));
    }
    x.check_finite(what)?;
    Ok(c)
}

/// Mean negative log-softmax of the true class and its gradient
/// `(softmax - onehot) / count` with respect to the logits.
pub fn ce_loss(logits: &Tensor, gt: &[ClassId]) -> Result<(f64, Tensor)> {
    let c = check_inputs(logits, gt, "cross-entropy")?;
    let count = gt.iter().filter(|g| !g.is_invalid()).count();
    if count == 0 {
        return Err(Error::UndefinedLoss("every voxel is masked"));
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), gr) in logits.data().chunks_exact(c).zip(gt).zip(grad.chunks_exact_mut(c)) {
        if g.is_invalid() {
            continue;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[g.index()];
        for (k, dst) in gr.iter_mut().enumerate() {
            *dst = (row[k] - lse).exp() / count as f64;
        }
        gr[g.index()] -= 1.0 / count as f64;
    }
    Ok((loss / count as f64, Tensor::from_parts(logits.dims().to_vec(), grad)))
}

/// Gradient of the Lovász extension of the Jaccard loss for foreground flags
/// sorted by descending error.
pub fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut jac = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        jac.push(1.0 - inter / union);
    }
    for i in (1..jac.len()).rev() {
        jac[i] -= jac[i - 1];
    }
    jac
}

/// Lovász-softmax averaged over classes present in `gt`, with its
/// subgradient with respect to the probabilities. Rows are expected to be
/// probability distributions; the subgradient treats entries independently.
pub fn lovasz_loss(probs: &Tensor, gt: &[ClassId]) -> Result<(f64, Tensor)> {
    let c = check_inputs(probs, gt, "lovasz")?;
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| !gt[i].is_invalid()).collect();
    let present: Vec<usize> = (0..c)
        .filter(|&k| valid.iter().any(|&i| gt[i].index() == k))
        .collect();
    if present.is_empty() {
        return Err(Error::UndefinedLoss("no class is present in the ground truth"));
    }
    let p = probs.data();
    let mut grad = vec![0.0; probs.len()];
    let mut loss = 0.0;
    let scale = 1.0 / present.len() as f64;
    for &k in &present {
        let mut entries: Vec<(f64, bool, usize)> = valid
            .iter()
            .map(|&i| {
                let fg = gt[i].index() == k;
                let e = if fg { 1.0 - p[i * c + k] } else { p[i * c + k] };
                (e, fg, i)
            })
            .collect();
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        let fg: Vec<bool> = entries.iter().map(|e| e.1).collect();
        let g = lovasz_grad(&fg);
        for ((e, is_fg, i), gi) in entries.iter().zip(&g) {
            loss += scale * e * gi;
            grad[i * c + k] += if *is_fg { -scale * gi } else { scale * gi };
        }
    }
    Ok((loss, Tensor::from_parts(probs.dims().to_vec(), grad)))
}

/// Row-wise softmax of `(voxels, classes)` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut data = logits.data().to_vec();
    softmax_rows(&mut data, logits.last_dim());
    Tensor::from_parts(logits.dims().to_vec(), data)
}

/// Total supervision on logits: cross-entropy plus Lovász-softmax on the
/// softmax probabilities, with the gradient of the total w.r.t. the logits.
pub fn ssc_loss(logits: &Tensor, gt: &[ClassId]) -> Result<SscLoss> {
    let (ce, g_ce) = ce_loss(logits, gt)?;
    let probs = softmax(logits);
    let (lz, g_p) = lovasz_loss(&probs, gt)?;
    let c = logits.last_dim();
    let mut grad = g_ce.into_data();
    for ((pr, gp), gr) in probs
        .data()
        .chunks_exact(c)
        .zip(g_p.data().chunks_exact(c))
        .zip(grad.chunks_exact_mut(c))
    {
        let dot: f64 = pr.iter().zip(gp).map(|(a, b)| a * b).sum();
        for k in 0..c {
            gr[k] += pr[k] * (gp[k] - dot);
        }
    }
    Ok(SscLoss {
        total: ce + lz,
        ce,
        lovasz: lz,
        grad: Tensor::from_parts(logits.dims().to_vec(), grad),
    })
}

#[derive(Clone, Debug)]
pub struct SscLoss {
    pub total: f64,
    pub ce: f64,
    pub lovasz: f64,
    pub grad: Tensor,
}
