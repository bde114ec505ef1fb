//! End-to-end acceptance criteria, each with its own tolerance and time
//! budget. One PASS/FAIL line per criterion goes straight to stderr so it
//! shows up even when test output is captured.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semls::acl::{acl, equal_iou_cases};
use semls::bam::{atrous_conv2d, bam_forward, AtrousConfig, BamParams, BamVariant};
use semls::detector::{
    decode_detections, direction_ce, direction_ce_grad, focal_loss, focal_loss_grad, make_targets, masked_l1,
    masked_l1_grad, total_loss, DecodeParams, DirectionMode, Encoding, Heads, LossWeights, TargetMaps,
};
use semls::eval::{evaluate, DetectionSet};
use semls::geometry3d::{triplet_projection_error, CameraView, Observation, SyntheticRig, Triplet};
use semls::io::{annotations_to_string, dataset_stats, load_annotations, save_annotations};
use semls::lcd::{
    best_match, build_index, ransac_verify, recall_at_precision, FrameSignature, QueryOutcome, RansacParams,
    SignatureSegment, VoteParams, PRECISION_LEVELS,
};
use semls::refine::{gradient_candidates, refine_labels, CandidateParams, REFINE_THRESHOLD};
use semls::repeatability::{
    repeatability, sample_affine, transform_segments, AffineSampling, AffineTransform, REPEAT_THRESHOLDS,
};
use semls::segment::{encode_general, CategoryRegistry, Point, SemLs};
use semls::{synth, Error};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random segment of length above 1 px with a category below `categories`.
fn seg(rng: &mut ChaCha8Rng, extent: f64, categories: usize) -> SemLs {
    let k = rng.random_range(0..categories);
    loop {
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..extent));
        if let Ok(s) = SemLs::from_coords(c[0], c[1], c[2], c[3], k) {
            if s.length() > 1.0 {
                return s;
            }
        }
    }
}

// 1
fn acl_suite() -> Check {
    let mut r = rng(1);
    let reference = SemLs::from_coords(0.0, 0.0, 10.0, 0.0, 0).unwrap();
    let other = SemLs::from_coords(2.0, 0.0, 10.0, 0.0, 0).unwrap();
    let worked = acl(&reference, &other, false).value();
    ensure((worked - 0.64).abs() < 1e-12, format!("worked example gave {worked}"))?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let a = seg(&mut r, 200.0, 4);
        let b = seg(&mut r, 200.0, 4);
        ensure(acl(&a, &a, false).value() == 1.0, "acl(S,S) != 1")?;
        let mut relabeled = a.clone();
        relabeled.category = (a.category + 1) % 4;
        ensure(acl(&a, &relabeled, false).value() == 0.0, "category mismatch not 0")?;
        let v = acl(&a, &b, r.random_bool(0.5)).value();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    ensure(
        (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi),
        format!("range [{lo}, {hi}]"),
    )?;
    Ok(format!(
        "worked example {worked:.12}, range [{lo:.3}, {hi:.3}] over 1e5 pairs"
    ))
}

// 2
fn equal_iou_discrimination() -> Check {
    let cases = equal_iou_cases(0.6);
    ensure(cases.len() == 7, "expected seven cases")?;
    for c in &cases {
        ensure(
            (c.box_iou() - 0.6).abs() <= 1e-9,
            format!("box IoU {} for {:?}", c.box_iou(), c.pattern),
        )?;
    }
    let vals: Vec<f64> = cases.iter().map(|c| c.acl()).collect();
    for i in 0..7 {
        for j in i + 1..7 {
            ensure(cases[i].pattern != cases[j].pattern, "patterns repeat")?;
            ensure(
                (vals[i] - vals[j]).abs() > 1e-6,
                format!("cases {i} and {j} share ACL {}", vals[i]),
            )?;
        }
    }
    let shown: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
    Ok(format!("IoU 0.6 for all, ACL {}", shown.join(" ")))
}

// 3
const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Straightforward COCO-style evaluation: per-image greedy matching, then
/// precision at each recall point taken as the best precision of any prefix
/// reaching that recall.
fn oracle_map(gt: &[Vec<SemLs>], det: &[Vec<SemLs>], categories: usize) -> Option<f64> {
    let mut aps = Vec::new();
    for k in 0..categories {
        let n_gt: usize = gt.iter().map(|g| g.iter().filter(|s| s.category == k).count()).sum();
        let confident = |s: &&SemLs| s.category == k && s.confidence.unwrap() >= 0.5;
        let n_det: usize = det.iter().map(|d| d.iter().filter(confident).count()).sum();
        if n_gt == 0 && n_det == 0 {
            continue;
        }
        for th in THRESHOLDS {
            let mut scored: Vec<(f64, bool)> = Vec::new();
            for (g, d) in gt.iter().zip(det) {
                let mut ds: Vec<&SemLs> = d.iter().filter(confident).collect();
                ds.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
                let mut used = vec![false; g.len()];
                for x in ds {
                    let mut best = None;
                    let mut best_v = th;
                    for (gi, y) in g.iter().enumerate() {
                        if used[gi] || y.category != k {
                            continue;
                        }
                        let v = acl(y, x, false).value();
                        if v >= best_v && (best.is_none() || v > best_v) {
                            best = Some(gi);
                            best_v = v;
                        }
                    }
                    if let Some(gi) = best {
                        used[gi] = true;
                    }
                    scored.push((x.confidence.unwrap(), best.is_some()));
                }
            }
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            if n_gt == 0 {
                aps.push(0.0);
                continue;
            }
            let mut sum = 0.0;
            for ri in 0..=100 {
                let r = ri as f64 / 100.0;
                let mut p_best: f64 = 0.0;
                for n in 1..=scored.len() {
                    let tp = scored[..n].iter().filter(|s| s.1).count();
                    if tp as f64 / n_gt as f64 >= r {
                        p_best = p_best.max(tp as f64 / n as f64);
                    }
                }
                sum += p_best;
            }
            aps.push(sum / 101.0);
        }
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

fn to_set(v: &[Vec<SemLs>]) -> DetectionSet {
    v.iter()
        .enumerate()
        .map(|(i, s)| (format!("img{i}"), s.clone()))
        .collect()
}

fn evaluator_oracle() -> Check {
    let reg = CategoryRegistry::default();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let images = r.random_range(1..=5);
        let mut gt: Vec<Vec<SemLs>> = (0..images)
            .map(|_| {
                let n = r.random_range(0..=4);
                (0..n).map(|_| seg(&mut r, 100.0, 3)).collect()
            })
            .collect();
        if gt.iter().all(Vec::is_empty) {
            gt[0].push(seg(&mut r, 100.0, 1));
        }
        let mut det: Vec<Vec<SemLs>> = vec![Vec::new(); images];
        for _ in 0..r.random_range(0..=10) {
            let i = r.random_range(0..images);
            let base = if !gt[i].is_empty() && r.random_bool(0.7) {
                let g = &gt[i][r.random_range(0..gt[i].len())];
                let [a, b] = g.endpoints();
                let j = |v: f64, r: &mut ChaCha8Rng| v + r.random_range(-4.0..4.0);
                let k = if r.random_bool(0.85) {
                    g.category
                } else {
                    r.random_range(0..3)
                };
                SemLs::from_coords(j(a.x, &mut r), j(a.y, &mut r), j(b.x, &mut r), j(b.y, &mut r), k)
                    .unwrap_or_else(|_| g.clone())
            } else {
                seg(&mut r, 100.0, 3)
            };
            det[i].push(base.with_confidence(r.random_range(0.3..1.0)).unwrap());
        }
        let report = evaluate(&to_set(&gt), &to_set(&det), &reg);
        let want = oracle_map(&gt, &det, 3);
        match (report.map, want) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (a, b) => ensure(a == b, format!("mAP {a:?} vs oracle {b:?}"))?,
        }

        // a false positive ranked last never raises any AP
        let mut more = det.clone();
        let fp = SemLs::from_coords(500.0, 500.0, 520.0, 500.0, r.random_range(0..3))
            .unwrap()
            .with_confidence(0.5)
            .unwrap();
        let min_conf = det
            .iter()
            .flatten()
            .filter_map(|s| s.confidence)
            .filter(|&c| c >= 0.5)
            .fold(1.0, f64::min);
        ensure(min_conf > 0.5, "a generated confidence ties with the appended one")?;
        more[r.random_range(0..images)].push(fp);
        let after = evaluate(&to_set(&gt), &to_set(&more), &reg);
        for c in &report.categories {
            let Some(a) = after.category(c.category) else {
                return Err("category vanished".into());
            };
            for t in 0..10 {
                ensure(
                    a.ap_per_threshold[t] <= c.ap_per_threshold[t],
                    "AP rose after a low-confidence FP",
                )?;
            }
        }
    }
    ensure(worst <= 1e-9, format!("max |mAP - oracle| = {worst:e}"))?;
    Ok(format!("200 datasets, max |mAP - oracle| {worst:.1e}, monotone"))
}

// 4
fn repeatability_suite() -> Check {
    let (w, h) = (640.0, 480.0);
    let mut r = rng(4);
    let id = AffineTransform::identity();
    for _ in 0..20 {
        let dets = synth::random_scene(&mut r, w, h, 15, 4);
        for th in REPEAT_THRESHOLDS {
            let re = repeatability(&dets, &dets, &id, th, false).map_err(|e| e.to_string())?;
            ensure(re == 1.0, format!("identity Re = {re}"))?;
        }
    }

    let a = SemLs::from_coords(10.0, 10.0, 110.0, 10.0, 0).unwrap();
    let b = SemLs::from_coords(300.0, 300.0, 300.0, 400.0, 1).unwrap();
    let c = SemLs::from_coords(500.0, 50.0, 600.0, 150.0, 2).unwrap();
    let hand = repeatability(&[a.clone(), b], &[a, c], &id, 0.5, false).map_err(|e| e.to_string())?;
    ensure(hand == 0.5, format!("hand count gave {hand}"))?;

    for seed in 0..100 {
        let t = sample_affine(seed, &AffineSampling::default(), w, h).map_err(|e| e.to_string())?;
        let scene = synth::random_scene(&mut r, w, h, 20, 4);
        let warped: Vec<SemLs> = transform_segments(&scene, &t, w, h, 10.0)
            .into_iter()
            .map(|x| x.segment)
            .collect();
        let di = synth::noisy_detections(&mut r, &scene, w, h, 2.0, 4);
        let dt = synth::noisy_detections(&mut r, &warped, w, h, 2.0, 4);
        let res: Vec<f64> = REPEAT_THRESHOLDS
            .iter()
            .map(|&th| repeatability(&di, &dt, &t, th, false).unwrap())
            .collect();
        ensure(
            res.windows(2).all(|p| p[1] <= p[0]),
            format!("Re not monotone: {res:?}"),
        )?;
    }
    Ok("identity Re = 1, hand count 0.5, monotone over 100 pairs".into())
}

// 5
fn single_cell(m: f64) -> TargetMaps {
    TargetMaps {
        heatmap: Array3::from_elem((1, 1, 1), m),
        offset: Array3::zeros((2, 1, 1)),
        wh: Array3::zeros((2, 1, 1)),
        ang: Array3::zeros((1, 1, 1)),
        len: Array3::zeros((1, 1, 1)),
        direction: Array3::zeros((1, 1, 1)),
        mask: Array2::ones((1, 1)),
        count: 1,
        stride: 4,
    }
}

fn central_difference(f: impl Fn(&Array3<f64>) -> f64, x: &Array3<f64>, idx: (usize, usize, usize)) -> f64 {
    let h = 1e-6;
    let mut p = x.clone();
    p[idx] += h;
    let up = f(&p);
    p[idx] = x[idx] - h;
    (up - f(&p)) / (2.0 * h)
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn loss_suite() -> Check {
    let mut r = rng(5);
    let segs = synth::separated_scene(&mut r, 96, 96, 4, 6, 3);
    let anns: Vec<_> = segs.iter().map(encode_general).collect();
    let t = make_targets(&anns, 3, 96, 96, 4).map_err(|e| e.to_string())?;
    for (enc, mode) in [
        (Encoding::LineAsObj, DirectionMode::Regression),
        (Encoding::LineAsObj, DirectionMode::Classification),
        (Encoding::AngMidLen, DirectionMode::Regression),
    ] {
        let b = total_loss(&Heads::ideal(&t, enc, mode), &t, &LossWeights::default(), enc, mode)
            .map_err(|e| e.to_string())?;
        let terms = [
            Some(b.heatmap),
            Some(b.offset),
            b.wh,
            b.direction,
            b.ang,
            b.len,
            Some(b.total),
        ];
        ensure(terms.iter().flatten().all(|v| *v == 0.0), format!("ideal heads {b:?}"))?;
    }

    let focal = focal_loss(&Array3::from_elem((1, 1, 1), 0.5), &single_cell(1.0)).unwrap();
    ensure((focal - 0.1733).abs() < 1e-4, format!("focal single cell {focal}"))?;
    let ce = direction_ce(
        &Array3::zeros((2, 1, 1)),
        &Array3::zeros((1, 1, 1)),
        &Array2::ones((1, 1)),
        1,
    )
    .unwrap();
    ensure((ce - 2f64.ln()).abs() < 1e-4, format!("CE single cell {ce}"))?;

    let (k, fh, fw) = t.heatmap.dim();
    let n = t.count;
    let masked: Vec<(usize, usize)> = t
        .mask
        .indexed_iter()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let pred = Array3::from_shape_fn((k, fh, fw), |_| r.random_range(0.05..0.95));
        let idx = (r.random_range(0..k), r.random_range(0..fh), r.random_range(0..fw));
        let (_, g) = focal_loss_grad(&pred, &t).unwrap();
        worst = worst.max(rel(
            g[idx],
            central_difference(|p| focal_loss(p, &t).unwrap(), &pred, idx),
        ));

        let (y, x) = masked[r.random_range(0..masked.len())];
        let idx = (r.random_range(0..2), y, x);
        let off = Array3::from_shape_fn((2, fh, fw), |i| {
            let d = r.random_range(0.05..0.5);
            t.offset[i] + if r.random_bool(0.5) { d } else { -d }
        });
        let g = masked_l1_grad(&off, &t.offset, &t.mask, n).unwrap();
        worst = worst.max(rel(
            g[idx],
            central_difference(|p| masked_l1(p, &t.offset, &t.mask, n).unwrap(), &off, idx),
        ));

        let logits = Array3::from_shape_fn((2, fh, fw), |_| r.random_range(-3.0..3.0));
        let (_, g) = direction_ce_grad(&logits, &t.direction, &t.mask, n).unwrap();
        worst = worst.max(rel(
            g[idx],
            central_difference(|l| direction_ce(l, &t.direction, &t.mask, n).unwrap(), &logits, idx),
        ));
    }
    ensure(worst < 1e-4, format!("gradient relative error {worst:e}"))?;
    Ok(format!(
        "ideal zeros, focal {focal:.4}, CE {ce:.4}, max gradient rel err {worst:.1e}"
    ))
}

// 6
fn decode_round_trip() -> Check {
    let mut r = rng(6);
    let stride = 4;
    let mut worst = 0.0f64;
    let mut total = 0;
    for i in 0..100 {
        let (enc, mode) = match i % 3 {
            0 => (Encoding::LineAsObj, DirectionMode::Regression),
            1 => (Encoding::LineAsObj, DirectionMode::Classification),
            _ => (Encoding::AngMidLen, DirectionMode::Regression),
        };
        let segs = synth::separated_scene(&mut r, 160, 128, stride, 10, 4);
        let anns: Vec<_> = segs.iter().map(encode_general).collect();
        let t = make_targets(&anns, 4, 160, 128, stride).map_err(|e| e.to_string())?;
        let params = DecodeParams {
            encoding: enc,
            direction_mode: mode,
            stride,
            ..DecodeParams::default()
        };
        let out = decode_detections(&Heads::ideal(&t, enc, mode), &params).map_err(|e| e.to_string())?;
        for s in &segs {
            let e = out
                .iter()
                .filter(|d| d.category == s.category)
                .map(|d| d.endpoint_error(s))
                .fold(f64::INFINITY, f64::min);
            ensure(
                e <= 0.5 * stride as f64,
                format!("scene {i}: annotation missed by {e} px"),
            )?;
            worst = worst.max(e);
            total += 1;
        }
    }
    Ok(format!(
        "{total} annotations in 100 scenes, max endpoint error {worst:.1e} px"
    ))
}

// 7
fn direct_conv(x: &Array3<f64>, k: &Array4<f64>, rate: (usize, usize), pad: (usize, usize)) -> Array3<f64> {
    let (ci, rows, cols) = x.dim();
    let (co, _, ky, kx) = k.dim();
    let oh = rows + 2 * pad.0 - (rate.0 * (ky - 1) + 1) + 1;
    let ow = cols + 2 * pad.1 - (rate.1 * (kx - 1) + 1) + 1;
    let mut out = Array3::zeros((co, oh, ow));
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for dy in 0..ky {
                        for dx in 0..kx {
                            let iy = (oy + dy * rate.0) as i64 - pad.0 as i64;
                            let ix = (ox + dx * rate.1) as i64 - pad.1 as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < rows && (ix as usize) < cols {
                                acc += k[[o, c, dy, dx]] * x[[c, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                out[[o, oy, ox]] = acc;
            }
        }
    }
    out
}

/// Plain zero-padded "same" convolution written without any dilation.
fn plain_conv(x: &Array3<f64>, k: &Array4<f64>) -> Array3<f64> {
    let (ci, rows, cols) = x.dim();
    let (co, _, ky, kx) = k.dim();
    let (py, px) = (ky / 2, kx / 2);
    Array3::from_shape_fn((co, rows, cols), |(o, y, xx)| {
        let mut acc = 0.0;
        for c in 0..ci {
            for dy in 0..ky {
                for dx in 0..kx {
                    let (iy, ix) = (y + dy, xx + dx);
                    if iy >= py && ix >= px && iy - py < rows && ix - px < cols {
                        acc += k[[o, c, dy, dx]] * x[[c, iy - py, ix - px]];
                    }
                }
            }
        }
        acc
    })
}

fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bam_suite() -> Check {
    let mut r = rng(7);
    for variant in [BamVariant::Bam51, BamVariant::Bam33] {
        for (c, h, w) in [(2, 8, 8), (8, 56, 56), (3, 17, 29)] {
            let x = Array3::from_shape_fn((c, h, w), |_| r.random_range(-1.0..1.0));
            let y = bam_forward(&x, &BamParams::random(c, variant, &mut r), variant).map_err(|e| e.to_string())?;
            ensure(
                y.dim() == x.dim(),
                format!("{variant:?}: {:?} -> {:?}", x.dim(), y.dim()),
            )?;
        }
    }
    let mut worst = 0.0f64;
    for variant in [BamVariant::Bam51, BamVariant::Bam33] {
        for cfg in variant.configs() {
            for _ in 0..5 {
                let x = Array3::from_shape_fn((2, 8, 8), |_| r.random_range(-1.0..1.0));
                let k = Array4::from_shape_fn((2, 2, cfg.kernel.0, cfg.kernel.1), |_| r.random_range(-1.0..1.0));
                let y = atrous_conv2d(&x, &k, &cfg).map_err(|e| e.to_string())?;
                worst = worst.max(max_abs(&y, &direct_conv(&x, &k, cfg.rate, cfg.pad)));
            }
        }
    }
    ensure(worst < 1e-12, format!("atrous vs loop {worst:e}"))?;
    let mut plain = 0.0f64;
    for kernel in [(3, 3), (5, 1), (1, 5), (5, 5)] {
        let x = Array3::from_shape_fn((2, 8, 8), |_| r.random_range(-1.0..1.0));
        let k = Array4::from_shape_fn((3, 2, kernel.0, kernel.1), |_| r.random_range(-1.0..1.0));
        let cfg = AtrousConfig::same_size(kernel, (1, 1)).map_err(|e| e.to_string())?;
        plain = plain.max(max_abs(&atrous_conv2d(&x, &k, &cfg).unwrap(), &plain_conv(&x, &k)));
    }
    ensure(plain < 1e-12, format!("rate (1,1) vs plain convolution {plain:e}"))?;
    Ok(format!(
        "shapes preserved, oracle max |diff| {worst:.1e}, rate-1 max |diff| {plain:.1e}"
    ))
}

// 8
fn geometry_suite() -> Check {
    let rig = SyntheticRig::default();
    let clean = triplet_projection_error(&rig.triplets(100, 0.0, 8)).map_err(|e| e.to_string())?;
    ensure(clean.mean < 1e-6, format!("noise-free mean {}", clean.mean))?;
    let noisy = triplet_projection_error(&rig.triplets(100, 1.0, 8)).map_err(|e| e.to_string())?;
    ensure(
        noisy.mean > 0.1 && noisy.mean < 5.0,
        format!("±1 px mean {}", noisy.mean),
    )?;

    // a line in a plane containing the driving axis is seen through the
    // epipole by both left and pre, so the two back-projected planes coincide
    let (left, pre, right) = rig.views();
    let (a, b) = (Vector3::new(2.0, 1.0, 30.0), Vector3::new(4.0, 2.0, 45.0));
    let ob = |v: &CameraView| {
        let s = SemLs::new(v.project(&a).unwrap(), v.project(&b).unwrap(), 0)
            .unwrap()
            .with_track_id(0);
        Observation { view: *v, segment: s }
    };
    let t = Triplet::new(ob(&left), ob(&pre), ob(&right)).map_err(|e| e.to_string())?;
    let err = t.error();
    ensure(
        matches!(err, Err(Error::Degenerate(_))),
        format!("epipolar case gave {err:?}"),
    )?;
    let code = err.unwrap_err().exit_code();
    ensure(code == 2, format!("exit code {code}"))?;
    let all = triplet_projection_error(&[t]);
    ensure(
        matches!(all, Err(Error::Empty(_))),
        "all-degenerate input must be reported",
    )?;
    Ok(format!(
        "noise-free {:.1e} px, ±1 px noise {:.3} px, epipolar case rejected",
        clean.mean, noisy.mean
    ))
}

// 9
fn refinement_suite() -> Check {
    let img = synth::rectangle_image(200, 200, 100..200, 50..150);
    let cands = gradient_candidates(&img, &CandidateParams::default());
    let drifted = SemLs::from_coords(101.0, 50.0, 101.0, 150.0, 0).unwrap();
    let far = SemLs::from_coords(20.0, 20.0, 60.0, 30.0, 1).unwrap();
    let labels = vec![drifted.clone(), far.clone()];
    let (out, report) = refine_labels(&labels, &cands, REFINE_THRESHOLD);
    ensure(
        report.replaced == 1 && out[0] != drifted,
        "drifted label was not replaced",
    )?;
    let off = out[0]
        .endpoints()
        .iter()
        .map(|p| (p.x - 100.0).abs())
        .fold(0.0, f64::max);
    ensure(off < 1.0, format!("refined label {off} px from the edge"))?;
    ensure(out[1] == far, "label without a candidate changed")?;
    let (again, _) = refine_labels(&out, &cands, REFINE_THRESHOLD);
    ensure(again == out, "refinement is not idempotent")?;
    Ok(format!("drifted label moved to {off:.3} px from the edge, idempotent"))
}

// 10
fn sweep_oracle(outcomes: &[QueryOutcome], p: f64) -> f64 {
    let positives = outcomes.iter().filter(|o| o.has_loop).count() as f64;
    let mut best: f64 = 0.0;
    for th in outcomes.iter().map(|o| o.score) {
        let acc: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.score >= th).collect();
        let correct = acc.iter().filter(|o| o.correct).count() as f64;
        if correct / acc.len() as f64 >= p {
            best = best.max(correct / positives);
        }
    }
    best
}

fn lcd_suite() -> Check {
    let scene = synth::loop_scene(10, 60, 0, 0.0);
    let index = build_index(scene.database.clone()).map_err(|e| e.to_string())?;
    for f in &scene.database {
        let m = best_match(f, &index, &VoteParams::default(), &RansacParams::default()).map_err(|e| e.to_string())?;
        ensure(
            m.frame_id.as_deref() == Some(f.frame_id.as_str()),
            format!("{} matched {:?}", f.frame_id, m.frame_id),
        )?;
    }

    let mut r = rng(10);
    for _ in 0..100 {
        let n = r.random_range(5..40);
        let mut outcomes: Vec<QueryOutcome> = (0..n)
            .map(|_| {
                let has_loop = r.random_bool(0.7);
                QueryOutcome {
                    score: r.random_range(0..12) as f64,
                    correct: has_loop && r.random_bool(0.75),
                    has_loop,
                }
            })
            .collect();
        outcomes[0].has_loop = true;
        let rep = recall_at_precision(&outcomes, &PRECISION_LEVELS).map_err(|e| e.to_string())?;
        let (r99, r95, r80) = (
            rep.recall_at(0.99).unwrap(),
            rep.recall_at(0.95).unwrap(),
            rep.recall_at(0.80).unwrap(),
        );
        ensure(r99 <= r95 && r95 <= r80, format!("R@P not monotone: {r99} {r95} {r80}"))?;
        for p in PRECISION_LEVELS {
            ensure(
                rep.recall_at(p) == Some(sweep_oracle(&outcomes, p)),
                format!("R@P{p} differs from the sweep"),
            )?;
        }
    }

    // planted similarity with one corrupted correspondence
    let (scale, rot, tx, ty) = (1.2, 0.3f64, 0.05, -0.04);
    let mut q = Vec::new();
    let mut d = Vec::new();
    for i in 0..8 {
        let c = Point::new(0.2 + 0.08 * i as f64, 0.3 + 0.05 * ((i * 3) % 7) as f64);
        let (s, co) = rot.sin_cos();
        let mut m = Point::new(scale * (co * c.x - s * c.y) + tx, scale * (s * c.x + co * c.y) + ty);
        if i == 5 {
            m = Point::new(m.x + 0.3, m.y - 0.25);
        }
        let sig = |center| SignatureSegment {
            category: 0,
            alpha: 45.0,
            center,
            length: 0.1,
        };
        q.push(sig(c));
        d.push(sig(m));
    }
    let fq = FrameSignature {
        frame_id: "q".into(),
        segments: q,
        pose: None,
    };
    let fd = FrameSignature {
        frame_id: "d".into(),
        segments: d,
        pose: None,
    };
    let pairs: Vec<(usize, usize)> = (0..8).map(|i| (i, i)).collect();
    let v = ransac_verify(&fq, &fd, &pairs, &RansacParams::default());
    let t = v.transform.ok_or("no transform")?;
    let dev = [(t.scale - scale), (t.rotation - rot), (t.tx - tx), (t.ty - ty)]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    ensure(dev < 1e-3, format!("similarity off by {dev:e}: {t:?}"))?;
    ensure(
        v.inliers.len() == 7 && !v.inliers.contains(&5),
        format!("inliers {:?}", v.inliers),
    )?;
    Ok(format!(
        "60 self-queries top-1, 100 tables match the sweep, RANSAC error {dev:.1e}"
    ))
}

// 11
const TEN_RECORDS: &str = r#"{"image_id":"a","width":100,"height":50,"segments":[{"x1":0.0,"y1":0.0,"x2":10.0,"y2":10.0,"category":"building"},{"x1":1.5,"y1":2.25,"x2":30.0,"y2":2.25,"category":"pole","score":0.75},{"x1":5.0,"y1":5.0,"x2":5.0,"y2":45.0,"category":"pole","track_id":3}]}
{"image_id":"b","width":100,"height":50,"segments":[{"x1":10.0,"y1":40.0,"x2":90.0,"y2":41.0,"category":"curb"},{"x1":0.1,"y1":0.2,"x2":0.30000000000000004,"y2":49.9,"category":"building"},{"x1":60.0,"y1":5.0,"x2":61.0,"y2":35.0,"category":"pole"},{"x1":20.0,"y1":10.0,"x2":40.0,"y2":30.0,"category":"grass","d_g":2}]}
{"image_id":"c","width":100,"height":50,"segments":[{"x1":3.0,"y1":4.0,"x2":99.0,"y2":4.0,"category":"curb"},{"x1":50.0,"y1":0.0,"x2":50.0,"y2":50.0,"category":"pole"},{"x1":70.0,"y1":10.0,"x2":80.0,"y2":20.0,"category":"building"}]}
"#;

fn io_suite() -> Check {
    let reg = CategoryRegistry::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ten.jsonl");
    std::fs::write(&path, TEN_RECORDS).map_err(|e| e.to_string())?;
    let set = load_annotations(&path, &reg).map_err(|e| e.to_string())?;
    let text = annotations_to_string(&set, &reg).map_err(|e| e.to_string())?;
    ensure(
        text == TEN_RECORDS,
        format!("canonical file did not round-trip:\n{text}"),
    )?;

    let mut r = rng(11);
    let mut random = set.clone();
    for img in &mut random.images {
        img.segments = synth::random_scene(&mut r, img.width as f64, img.height as f64, 30, 4);
    }
    let p1 = dir.path().join("r1.jsonl");
    let p2 = dir.path().join("r2.jsonl");
    save_annotations(&p1, &random, &reg).map_err(|e| e.to_string())?;
    let back = load_annotations(&p1, &reg).map_err(|e| e.to_string())?;
    ensure(back == random, "random annotations changed on reload")?;
    save_annotations(&p2, &back, &reg).map_err(|e| e.to_string())?;
    ensure(
        std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(),
        "second save differs",
    )?;

    let s = dataset_stats(&set, &reg).map_err(|e| e.to_string())?;
    let counts: BTreeMap<&str, usize> = s.per_category.iter().map(|(k, n)| (k.as_str(), *n)).collect();
    let hand = BTreeMap::from([("building", 3), ("pole", 4), ("curb", 2), ("grass", 1)]);
    ensure(counts == hand && s.total == 10 && s.images == 3, format!("stats {s:?}"))?;
    ensure((s.labels_per_image - 10.0 / 3.0).abs() < 1e-12, "labels per image")?;

    let run = |args: &[&str]| {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv: Vec<&str> = std::iter::once("semls").chain(args.iter().copied()).collect();
        let code = semls::cli::run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&err).into_owned(),
        )
    };
    let (code, out, _) = run(&["stats", "--annotations", path.to_str().unwrap()]);
    ensure(code == 0, "stats failed")?;
    for (k, n) in &hand {
        ensure(
            out.lines()
                .any(|l| l.split_whitespace().collect::<Vec<_>>() == [*k, &n.to_string()]),
            format!("stats output lacks {k} {n}:\n{out}"),
        )?;
    }

    let fx = synth::write_fixtures(&dir.path().join("fx"), 11).map_err(|e| e.to_string())?;
    let csv = dir.path().join("csv");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_owned();
    let o = s(&csv);
    let commands: Vec<Vec<String>> = vec![
        vec!["acl".into(), "--pairs".into(), s(&fx.pairs)],
        vec![
            "eval".into(),
            "--gt".into(),
            s(&fx.ground_truth),
            "--det".into(),
            s(&fx.detections),
        ],
        vec![
            "repeat".into(),
            "--dets".into(),
            s(&fx.detections),
            "--warped".into(),
            s(&fx.warped_detections),
            "--transforms".into(),
            s(&fx.transforms),
        ],
        vec![
            "refine".into(),
            "--labels".into(),
            s(&fx.labels),
            "--image".into(),
            s(&fx.image),
        ],
        vec![
            "projerr".into(),
            "--annotations".into(),
            s(&fx.track_labels),
            "--calibration".into(),
            s(&fx.calibration),
            "--triplets".into(),
            s(&fx.triplets),
        ],
        vec![
            "lcd".into(),
            "--query".into(),
            s(&fx.lcd_query),
            "--db".into(),
            s(&fx.lcd_database),
            "--poses".into(),
            s(&fx.poses),
        ],
        vec!["stats".into(), "--annotations".into(), s(&fx.ground_truth)],
        vec!["losscheck".into()],
    ];
    for c in &commands {
        let mut args: Vec<&str> = c.iter().map(String::as_str).collect();
        args.extend(["--out", o.as_str(), "--seed", "11"]);
        let (code, _, err) = run(&args);
        ensure(code == 0, format!("`{}` exited {code}: {err}", c[0]))?;
    }
    Ok("canonical and random round trips byte-identical, stats hand counts, 8 commands exit 0".into())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

#[test]
fn acceptance_criteria() {
    let criteria = [
        Criterion {
            name: "acl suite",
            budget: Duration::from_secs(1),
            run: acl_suite,
        },
        Criterion {
            name: "equal-IoU discrimination",
            budget: Duration::from_secs(1),
            run: equal_iou_discrimination,
        },
        Criterion {
            name: "evaluator oracle",
            budget: Duration::from_secs(30),
            run: evaluator_oracle,
        },
        Criterion {
            name: "repeatability",
            budget: Duration::from_secs(10),
            run: repeatability_suite,
        },
        Criterion {
            name: "loss suite",
            budget: Duration::from_secs(30),
            run: loss_suite,
        },
        Criterion {
            name: "decode round trip",
            budget: Duration::from_secs(10),
            run: decode_round_trip,
        },
        Criterion {
            name: "bi-atrous module",
            budget: Duration::from_secs(10),
            run: bam_suite,
        },
        Criterion {
            name: "geometry",
            budget: Duration::from_secs(10),
            run: geometry_suite,
        },
        Criterion {
            name: "refinement",
            budget: Duration::from_secs(10),
            run: refinement_suite,
        },
        Criterion {
            name: "loop closure",
            budget: Duration::from_secs(30),
            run: lcd_suite,
        },
        Criterion {
            name: "i/o and cli",
            budget: Duration::from_secs(10),
            run: io_suite,
        },
    ];
    let mut failed = Vec::new();
    let mut log = std::io::stderr().lock();
    let _ = writeln!(log);
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(e) => (false, e),
        };
        let tag = if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(
            log,
            "{tag} {:>2} {:<26} {:>8.3}s / {:>3}s  {detail}",
            i + 1,
            c.name,
            took.as_secs_f64(),
            c.budget.as_secs()
        );
        if !ok {
            failed.push(c.name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
