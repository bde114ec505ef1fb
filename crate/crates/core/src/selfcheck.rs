//! Numerical self-checks for the detector and BAM reference code.
//!
//! Backs the `losscheck` command. Every check is deterministic for a seed.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use serde::Serialize;

use crate::bam::{atrous_conv2d, bam_forward, AtrousConfig, BamParams, BamVariant};
use crate::detector::gradcheck::{numeric_partial, relative_error};
use crate::detector::{
    decode_detections, direction_ce, direction_ce_grad, focal_loss, focal_loss_grad, make_targets, masked_l1,
    masked_l1_grad, total_loss, DecodeParams, DirectionMode, Encoding, Heads, LossWeights, TargetMaps, DEFAULT_STRIDE,
};
use crate::segment::encode_general;
use crate::synth;

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

const COMBOS: [(Encoding, DirectionMode); 3] = [
    (Encoding::LineAsObj, DirectionMode::Regression),
    (Encoding::LineAsObj, DirectionMode::Classification),
    (Encoding::AngMidLen, DirectionMode::Regression),
];

fn scene_targets(seed: u64, n: usize) -> TargetMaps {
    let mut rng = synth::rng(seed);
    let segs = synth::separated_scene(&mut rng, 96, 96, DEFAULT_STRIDE, n, 3);
    let anns: Vec<_> = segs.iter().map(encode_general).collect();
    make_targets(&anns, 3, 96, 96, DEFAULT_STRIDE).expect("valid synthetic scene")
}

fn ideal_zeros(seed: u64) -> CheckResult {
    let t = scene_targets(seed, 6);
    let mut worst = 0.0f64;
    for (enc, mode) in COMBOS {
        let heads = Heads::ideal(&t, enc, mode);
        let b = total_loss(&heads, &t, &LossWeights::default(), enc, mode);
        match b {
            Ok(b) => {
                let terms = [
                    Some(b.heatmap),
                    Some(b.offset),
                    b.wh,
                    b.direction,
                    b.ang,
                    b.len,
                    Some(b.total),
                ];
                worst = terms.iter().flatten().fold(worst, |m, v| m.max(v.abs()));
            }
            Err(e) => return CheckResult::new("ideal_zero", false, e.to_string()),
        }
    }
    CheckResult::new("ideal_zero", worst == 0.0, format!("max |loss| = {worst:e}"))
}

fn single_cell_maps(m: f64) -> TargetMaps {
    TargetMaps {
        heatmap: Array3::from_elem((1, 1, 1), m),
        offset: Array3::zeros((2, 1, 1)),
        wh: Array3::zeros((2, 1, 1)),
        ang: Array3::zeros((1, 1, 1)),
        len: Array3::zeros((1, 1, 1)),
        direction: Array3::zeros((1, 1, 1)),
        mask: Array2::ones((1, 1)),
        count: 1,
        stride: DEFAULT_STRIDE,
    }
}

fn hand_values() -> Vec<CheckResult> {
    let focal = focal_loss(&Array3::from_elem((1, 1, 1), 0.5), &single_cell_maps(1.0)).unwrap_or(f64::NAN);
    let ce = direction_ce(
        &Array3::zeros((2, 1, 1)),
        &Array3::zeros((1, 1, 1)),
        &Array2::ones((1, 1)),
        1,
    )
    .unwrap_or(f64::NAN);
    vec![
        CheckResult::new(
            "focal_single_cell",
            (focal - 0.1733).abs() < 1e-4,
            format!("{focal:.6} (expected 0.1733)"),
        ),
        CheckResult::new(
            "ce_single_cell",
            (ce - std::f64::consts::LN_2).abs() < 1e-4,
            format!("{ce:.6} (expected ln 2)"),
        ),
    ]
}

/// Central-difference checks of the analytic gradients at `points` random
/// entries per loss, each on a freshly drawn prediction array.
pub fn gradient_checks(seed: u64, points: usize) -> Vec<CheckResult> {
    let mut rng = synth::rng(seed);
    let t = scene_targets(seed ^ 0x9e37, 4);
    let (k, fh, fw) = t.heatmap.dim();
    let n = t.count;
    let masked: Vec<(usize, usize)> = t
        .mask
        .indexed_iter()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, _)| i)
        .collect();
    let h = 1e-6;
    let (mut focal, mut l1, mut ce) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let pred = Array3::from_shape_fn((k, fh, fw), |_| rng.random_range(0.05..0.95));
        let idx = (rng.random_range(0..k), rng.random_range(0..fh), rng.random_range(0..fw));
        focal = focal.max(match focal_loss_grad(&pred, &t) {
            Ok((_, g)) => relative_error(
                g[idx],
                numeric_partial(|p| focal_loss(p, &t).unwrap_or(f64::NAN), &pred, idx, h),
                1e-5,
            ),
            Err(_) => f64::NAN,
        });

        let (y, x) = masked[rng.random_range(0..masked.len())];
        // offsets kept at least 0.05 from the target so |.| stays differentiable
        let off = Array3::from_shape_fn((2, fh, fw), |(c, y, x)| {
            let d = rng.random_range(0.05..0.5);
            t.offset[[c, y, x]] + if rng.random_bool(0.5) { d } else { -d }
        });
        let idx = (rng.random_range(0..2), y, x);
        l1 = l1.max(match masked_l1_grad(&off, &t.offset, &t.mask, n) {
            Ok(g) => relative_error(
                g[idx],
                numeric_partial(
                    |p| masked_l1(p, &t.offset, &t.mask, n).unwrap_or(f64::NAN),
                    &off,
                    idx,
                    h,
                ),
                1e-5,
            ),
            Err(_) => f64::NAN,
        });

        let logits = Array3::from_shape_fn((2, fh, fw), |_| rng.random_range(-3.0..3.0));
        ce = ce.max(match direction_ce_grad(&logits, &t.direction, &t.mask, n) {
            Ok((_, g)) => relative_error(
                g[idx],
                numeric_partial(
                    |l| direction_ce(l, &t.direction, &t.mask, n).unwrap_or(f64::NAN),
                    &logits,
                    idx,
                    h,
                ),
                1e-5,
            ),
            Err(_) => f64::NAN,
        });
    }
    [("grad_focal", focal), ("grad_l1", l1), ("grad_ce", ce)]
        .into_iter()
        .map(|(name, e)| CheckResult::new(name, e < 1e-4, format!("max rel err {e:.2e} over {points} points")))
        .collect()
}

/// Encode random scenes into targets, decode ideal heads, and require every
/// annotation back within half a stride.
pub fn decode_round_trip(seed: u64, scenes: usize) -> CheckResult {
    let mut rng = synth::rng(seed);
    let tol = 0.5 * DEFAULT_STRIDE as f64;
    let mut worst = 0.0f64;
    let mut missing = 0usize;
    for i in 0..scenes {
        let (enc, mode) = COMBOS[i % COMBOS.len()];
        let segs = synth::separated_scene(&mut rng, 128, 128, DEFAULT_STRIDE, 8, 3);
        let anns: Vec<_> = segs.iter().map(encode_general).collect();
        let Ok(t) = make_targets(&anns, 3, 128, 128, DEFAULT_STRIDE) else {
            missing += segs.len();
            continue;
        };
        let params = DecodeParams {
            encoding: enc,
            direction_mode: mode,
            ..DecodeParams::default()
        };
        let out = decode_detections(&Heads::ideal(&t, enc, mode), &params).unwrap_or_default();
        for s in &segs {
            let best = out
                .iter()
                .filter(|d| d.category == s.category)
                .map(|d| d.endpoint_error(s))
                .fold(f64::INFINITY, f64::min);
            if best > tol {
                missing += 1;
            } else {
                worst = worst.max(best);
            }
        }
    }
    CheckResult::new(
        "decode_round_trip",
        missing == 0,
        format!("{scenes} scenes, {missing} missed, max endpoint error {worst:.2e} px"),
    )
}

/// Same-size contract of both BAM variants and agreement with a direct loop.
pub fn bam_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = synth::rng(seed);
    let mut shapes_ok = true;
    for variant in [BamVariant::Bam51, BamVariant::Bam33] {
        let params = BamParams::random(4, variant, &mut rng);
        let x = Array3::from_shape_fn((4, 20, 28), |_| rng.random_range(-1.0..1.0));
        shapes_ok &= bam_forward(&x, &params, variant)
            .map(|y| y.dim() == x.dim())
            .unwrap_or(false);
    }
    let mut worst = 0.0f64;
    for variant in [BamVariant::Bam51, BamVariant::Bam33] {
        for cfg in variant.configs() {
            let x = Array3::from_shape_fn((2, 8, 8), |_| rng.random_range(-1.0..1.0));
            let k = Array4::from_shape_fn((3, 2, cfg.kernel.0, cfg.kernel.1), |_| rng.random_range(-1.0..1.0));
            match atrous_conv2d(&x, &k, &cfg) {
                Ok(y) => {
                    worst = worst.max(
                        (&y - &direct_conv(&x, &k, &cfg))
                            .iter()
                            .fold(0.0, |m, d| m.max(d.abs())),
                    )
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    vec![
        CheckResult::new("bam_shape", shapes_ok, "BAM51 and BAM33 preserve (C,H,W)".into()),
        CheckResult::new("bam_oracle", worst < 1e-12, format!("max |diff| {worst:.2e}")),
    ]
}

fn direct_conv(x: &Array3<f64>, k: &Array4<f64>, cfg: &AtrousConfig) -> Array3<f64> {
    let (ci, rows, cols) = x.dim();
    let (co, _, ky, kx) = k.dim();
    let (oh, ow) = cfg.output_dims(rows, cols).unwrap_or((0, 0));
    Array3::from_shape_fn((co, oh, ow), |(o, oy, ox)| {
        let mut acc = 0.0;
        for c in 0..ci {
            for dy in 0..ky {
                for dx in 0..kx {
                    let iy = (oy + dy * cfg.rate.0) as isize - cfg.pad.0 as isize;
                    let ix = (ox + dx * cfg.rate.1) as isize - cfg.pad.1 as isize;
                    if (0..rows as isize).contains(&iy) && (0..cols as isize).contains(&ix) {
                        acc += k[[o, c, dy, dx]] * x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
        acc
    })
}

/// Every check behind `losscheck`.
pub fn run_losscheck(seed: u64) -> Vec<CheckResult> {
    let mut out = vec![ideal_zeros(seed)];
    out.extend(hand_values());
    out.extend(gradient_checks(seed, 50));
    out.push(decode_round_trip(seed, 100));
    out.extend(bam_checks(seed));
    out
}
