//! Self-check suite: numerical invariants and finite-difference gradient
//! checks on randomized small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{scaled_dot_product, BevAttention, PillarAttention};
use super::encoder::{bev_encode, BevEncoder};
use super::layers::Linear;
use super::loss::{ce_loss, lovasz_loss, softmax, ssc_loss};
use super::split::{soft_composite, soft_split, SplitGeometry};
use super::tensor::{softmax_rows, Tensor};
use super::{DualFlow4d, KernelConfig, BEV_CHANNELS};
use crate::grid::ClassId;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct KernelReport {
    pub checks: Vec<CheckOutcome>,
}

impl KernelReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Central differences of `f` at `x` for every entry.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let hi = f(&probe);
            probe.data_mut()[i] = orig - step;
            let lo = f(&probe);
            probe.data_mut()[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random `(n, c)` logit matrix with labels covering at least one valid voxel.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<ClassId>) {
    let n = rng.gen_range(2..=8);
    let c = rng.gen_range(2..=6);
    let logits = Tensor::from_fn(vec![n, c], |_| rng.gen_range(-3.0..3.0));
    let mut gt: Vec<ClassId> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.15) {
                ClassId::INVALID
            } else {
                ClassId(rng.gen_range(0..c) as u8)
            }
        })
        .collect();
    if gt.iter().all(|g| g.is_invalid()) {
        gt[0] = ClassId(0);
    }
    (logits, gt)
}

/// Smallest gap between the sorted Lovász errors of any class, i.e. the
/// distance to the nearest sort tie.
pub fn lovasz_tie_gap(probs: &Tensor, gt: &[ClassId]) -> f64 {
    let c = probs.last_dim();
    let mut gap = f64::INFINITY;
    for k in 0..c {
        let mut e: Vec<f64> = gt
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.is_invalid())
            .map(|(i, g)| {
                let p = probs.data()[i * c + k];
                if g.index() == k {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        e.sort_by(f64::total_cmp);
        gap = e.windows(2).map(|w| w[1] - w[0]).fold(gap, f64::min);
    }
    gap
}

fn max_rel(analytic: &Tensor, numeric: &[f64]) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn check_ce(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (x, gt) = random_instance(rng);
        let (_, g) = ce_loss(&x, &gt).expect("instance has a valid voxel");
        let n = central_difference(|t| ce_loss(t, &gt).map(|r| r.0).unwrap_or(f64::NAN), &x, FD_STEP);
        worst = worst.max(max_rel(&g, &n));
    }
    outcome(
        "ce-gradient",
        worst <= GRAD_TOLERANCE,
        format!("{instances} instances, max relative error {worst:.3e}"),
    )
}

fn check_lovasz(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut done = 0;
    while done < instances {
        let (x, gt) = random_instance(rng);
        let p = softmax(&x);
        if lovasz_tie_gap(&p, &gt) < 100.0 * FD_STEP {
            skipped += 1;
            continue;
        }
        let (_, g) = lovasz_loss(&p, &gt).expect("instance has a present class");
        let n = central_difference(|t| lovasz_loss(t, &gt).map(|r| r.0).unwrap_or(f64::NAN), &p, FD_STEP);
        worst = worst.max(max_rel(&g, &n));
        done += 1;
    }
    outcome(
        "lovasz-gradient",
        worst <= GRAD_TOLERANCE,
        format!("{instances} instances ({skipped} near-tie draws skipped), max relative error {worst:.3e}"),
    )
}

fn check_ssc_sum(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut ok = true;
    for _ in 0..20 {
        let (x, gt) = random_instance(rng);
        let s = ssc_loss(&x, &gt).expect("valid instance");
        let ce = ce_loss(&x, &gt).unwrap().0;
        let lz = lovasz_loss(&softmax(&x), &gt).unwrap().0;
        ok &= s.total == ce + lz;
    }
    outcome("total-loss-is-sum", ok, "20 instances".into())
}

fn check_softmax(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let mut row_err = |rows: &[f64], len: usize| {
        for r in rows.chunks(len) {
            worst = worst.max((r.iter().sum::<f64>() - 1.0).abs());
        }
    };
    let mut raw: Vec<f64> = (0..400).map(|_| rng.gen_range(-50.0..50.0)).collect();
    softmax_rows(&mut raw, 20);
    row_err(&raw, 20);

    let bev = BevAttention::new(16, 4, rng).unwrap();
    let p = Tensor::from_fn(vec![3, 4, 4, 16], |_| rng.gen_range(-2.0..2.0));
    let (_, weights) = bev.forward_with_weights(&p).unwrap();
    for w in &weights {
        row_err(w, 48);
    }
    let pillar = PillarAttention::new(16, 4, rng).unwrap();
    let (_, weights) = pillar.forward_with_weights(&p).unwrap();
    for w in &weights {
        row_err(w, 12);
    }
    outcome("softmax-row-sums", worst <= 1e-9, format!("max |row sum - 1| = {worst:.3e}"))
}

fn check_split_round_trip(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for (h, w, p, s) in [(13, 13, 7, 3), (14, 21, 7, 7), (9, 11, 3, 2), (10, 10, 4, 3)] {
        let geom = SplitGeometry::new(h, w, (p, p), (s, s)).unwrap();
        let x = Tensor::from_fn(vec![2, h, w, 3], |_| rng.gen_range(-5.0..5.0));
        let zero = Tensor::zeros(x.dims().to_vec());
        let tok = soft_split(&x, &zero, &geom, &Linear::identity(p * p * 3)).unwrap();
        let back = soft_composite(&tok, &geom).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
    }
    outcome("split-composite-identity", worst <= 1e-12, format!("max abs error {worst:.3e}"))
}

fn check_zero_qkv(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut attn = BevAttention::new(16, 4, rng).unwrap();
    attn.qkv = Linear::zeros(16, 48);
    let p = Tensor::from_fn(vec![2, 3, 3, 16], |_| rng.gen_range(-2.0..2.0));
    let z = attn.forward_with_weights(&p).unwrap().0;
    outcome("zero-qkv-residual", z == p, format!("max abs diff {:.3e}", z.max_abs_diff(&p)))
}

fn check_closed_form() -> CheckOutcome {
    let (o, w) = scaled_dot_product(&[1.0], &[0.0, 3f64.ln()], &[2.0, 6.0], 1, 1);
    let err = (w[0] - 0.25).abs().max((w[1] - 0.75).abs()).max((o[0] - 5.0).abs());
    outcome("two-token-attention", err <= 1e-12, format!("max error {err:.3e}"))
}

fn check_encoder() -> CheckOutcome {
    let enc = BevEncoder::new(4, 7);
    let x = Tensor::from_fn(vec![64, 64, 4], |i| ((i * 31) % 7) as f64 / 7.0);
    match bev_encode(&enc, &x) {
        Ok(y) => outcome(
            "bev-encode-shape",
            y.dims() == [4, 4, BEV_CHANNELS],
            format!("64x64 -> {:?}", y.dims()),
        ),
        Err(e) => outcome("bev-encode-shape", false, e.to_string()),
    }
}

fn check_forward(seed: u64) -> CheckOutcome {
    let cfg = KernelConfig {
        seed,
        ..Default::default()
    };
    let t = cfg.frames();
    let run = || -> crate::Result<Tensor> {
        let feats = Tensor::from_fn(vec![t, 13, 13, BEV_CHANNELS], |i| ((i % 23) as f64 - 11.0) / 11.0);
        DualFlow4d::new(cfg.clone())?.forward(&feats)
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => outcome(
            "dualflow-forward",
            a == b && a.dims() == [t, 3, 3, 256],
            format!("default config, {t} frames of 13x13 -> {:?}, reproducible: {}", a.dims(), a == b),
        ),
        (Err(e), _) | (_, Err(e)) => outcome("dualflow-forward", false, e.to_string()),
    }
}

/// Runs every check; gradient checks use `instances` random instances each.
pub fn run_checks(seed: u64, instances: usize) -> KernelReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KernelReport {
        checks: vec![
            check_softmax(&mut rng),
            check_split_round_trip(&mut rng),
            check_zero_qkv(&mut rng),
            check_closed_form(),
            check_ce(&mut rng, instances),
            check_lovasz(&mut rng, instances),
            check_ssc_sum(&mut rng),
            check_encoder(),
            check_forward(seed),
        ],
    }
}
