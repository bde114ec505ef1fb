//! Repeatability of segment detections under a known affine warp.
//!
//! An image `I` is warped by a random affine transform `T` into `I^t`. A
//! detection in `I` repeats when its warped copy has ACL above a threshold
//! with some detection in `I^t`, and vice versa through `T^-1`:
//!
//! ```text
//! Re = (N[I -> I^t] + N[I^t -> I]) / (N[I] + N[I^t])
//! ```
//!
//! Matching is one-to-one, greedy by descending ACL, with the warped segment
//! as the ACL reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acl::acl;
use crate::error::{Error, Result};
use crate::segment::{Point, SemLs};

/// Thresholds averaged into mARe.
pub const REPEAT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Default minimum length of a warped and clipped segment.
pub const DEFAULT_MIN_LEN: f64 = 10.0;

/// Row-major 2x3 affine matrix acting on pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { m };
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::validation("affine matrix must be finite"));
        }
        if t.determinant().abs() < 1e-12 {
            return Err(Error::degenerate("affine transform is not invertible"));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn from_row_major(v: [f64; 6]) -> Result<Self> {
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]]])
    }

    pub fn to_row_major(&self) -> [f64; 6] {
        let [a, b] = self.m;
        [a[0], a[1], a[2], b[0], b[1], b[2]]
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, p: Point) -> Point {
        let [a, b] = self.m;
        Point::new(a[0] * p.x + a[1] * p.y + a[2], b[0] * p.x + b[1] * p.y + b[2])
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::degenerate("affine transform is not invertible"));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Self {
            m: [[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]],
        })
    }

    /// Maps both endpoints; `None` if the warped segment degenerates.
    pub fn apply_segment(&self, s: &SemLs) -> Option<SemLs> {
        s.with_geometry(self.apply(s.p1()), self.apply(s.p2())).ok()
    }
}

/// Sampling ranges for [`sample_affine`]. Each range is `(low, high)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineSampling {
    pub rotation_deg: (f64, f64),
    pub scale: (f64, f64),
    pub shear_deg: (f64, f64),
    /// Translation as a fraction of image width / height.
    pub translation_frac: (f64, f64),
}

impl Default for AffineSampling {
    fn default() -> Self {
        Self {
            rotation_deg: (-15.0, 15.0),
            scale: (0.9, 1.1),
            shear_deg: (-5.0, 5.0),
            translation_frac: (-0.1, 0.1),
        }
    }
}

impl AffineSampling {
    pub fn identity() -> Self {
        Self {
            rotation_deg: (0.0, 0.0),
            scale: (1.0, 1.0),
            shear_deg: (0.0, 0.0),
            translation_frac: (0.0, 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation", self.rotation_deg),
            ("scale", self.scale),
            ("shear", self.shear_deg),
            ("translation", self.translation_frac),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::validation(format!("{name} range ({lo}, {hi}) is inverted")));
            }
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::validation("scale range must be positive"));
        }
        if self.shear_deg.0 <= -90.0 || self.shear_deg.1 >= 90.0 {
            return Err(Error::validation("shear must lie strictly within (-90, 90) degrees"));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Deterministic random affine transform about the image center.
///
/// `x' = R(rot) * Shear(sh) * scale * (x - c) + c + t`
pub fn sample_affine(seed: u64, cfg: &AffineSampling, width: f64, height: f64) -> Result<AffineTransform> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = draw(&mut rng, cfg.rotation_deg).to_radians();
    let scale = draw(&mut rng, cfg.scale);
    let shear = draw(&mut rng, cfg.shear_deg).to_radians();
    let tx = draw(&mut rng, cfg.translation_frac) * width;
    let ty = draw(&mut rng, cfg.translation_frac) * height;

    let (s, c) = rot.sin_cos();
    let k = shear.tan();
    // R * [[1, k], [0, 1]] * scale
    let a = [[c * scale, (c * k - s) * scale], [s * scale, (s * k + c) * scale]];
    let (cx, cy) = (0.5 * width, 0.5 * height);
    let m = [
        [a[0][0], a[0][1], cx - (a[0][0] * cx + a[0][1] * cy) + tx],
        [a[1][0], a[1][1], cy - (a[1][0] * cx + a[1][1] * cy) + ty],
    ];
    AffineTransform::new(m)
}

/// Liang-Barsky clip of `p -> q` against `[0, w] x [0, h]`.
fn clip_to_rect(p: Point, q: Point, w: f64, h: f64) -> Option<(Point, Point)> {
    let (dx, dy) = (q.x - p.x, q.y - p.y);
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (den, num) in [(-dx, p.x), (dx, w - p.x), (-dy, p.y), (dy, h - p.y)] {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| {
        if t == 0.0 {
            p
        } else if t == 1.0 {
            q
        } else {
            Point::new(p.x + t * dx, p.y + t * dy)
        }
    };
    Some((at(t0), at(t1)))
}

/// A warped segment and the index of the segment it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedSegment {
    pub source: usize,
    pub segment: SemLs,
}

/// Warps segments into the transformed image, clipping to `width x height`
/// and dropping remnants shorter than `min_len`.
pub fn transform_segments(
    segs: &[SemLs],
    t: &AffineTransform,
    width: f64,
    height: f64,
    min_len: f64,
) -> Vec<WarpedSegment> {
    segs.iter()
        .enumerate()
        .filter_map(|(source, s)| {
            let (p, q) = clip_to_rect(t.apply(s.p1()), t.apply(s.p2()), width, height)?;
            let segment = s.with_geometry(p, q).ok()?;
            (segment.length() >= min_len).then_some(WarpedSegment { source, segment })
        })
        .collect()
}

/// Repeated-detection counts for one image pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RepeatCounts {
    /// Detections of `I` re-found in `I^t`.
    pub forward: usize,
    /// Detections of `I^t` re-found in `I`.
    pub backward: usize,
    pub n_source: usize,
    pub n_target: usize,
}

impl RepeatCounts {
    /// Repeatability; 0 when both detection sets are empty.
    pub fn re(&self) -> f64 {
        let total = self.n_source + self.n_target;
        if total == 0 {
            0.0
        } else {
            (self.forward + self.backward) as f64 / total as f64
        }
    }
}

/// One-to-one greedy count of `sources` (after warping) repeated in `targets`.
fn count_repeated(sources: &[SemLs], targets: &[SemLs], t: &AffineTransform, th: f64, agnostic: bool) -> usize {
    let mut pairs = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        let Some(w) = t.apply_segment(s) else { continue };
        for (j, d) in targets.iter().enumerate() {
            let v = acl(&w, d, agnostic).value();
            if v > th {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_s = vec![false; sources.len()];
    let mut used_t = vec![false; targets.len()];
    let mut n = 0;
    for (_, i, j) in pairs {
        if !used_s[i] && !used_t[j] {
            used_s[i] = true;
            used_t[j] = true;
            n += 1;
        }
    }
    n
}

/// Counts repeated detections in both directions at threshold `th`.
pub fn repeat_counts(
    dets_i: &[SemLs],
    dets_it: &[SemLs],
    t: &AffineTransform,
    th: f64,
    category_agnostic: bool,
) -> Result<RepeatCounts> {
    if !(th > 0.0 && th <= 1.0) {
        return Err(Error::validation(format!("threshold {th} outside (0, 1]")));
    }
    let inv = t.inverse()?;
    Ok(RepeatCounts {
        forward: count_repeated(dets_i, dets_it, t, th, category_agnostic),
        backward: count_repeated(dets_it, dets_i, &inv, th, category_agnostic),
        n_source: dets_i.len(),
        n_target: dets_it.len(),
    })
}

pub fn repeatability(
    dets_i: &[SemLs],
    dets_it: &[SemLs],
    t: &AffineTransform,
    th: f64,
    category_agnostic: bool,
) -> Result<f64> {
    repeat_counts(dets_i, dets_it, t, th, category_agnostic).map(|c| c.re())
}

/// Detections of an image, of its warped counterpart, and the warp.
#[derive(Clone, Debug)]
pub struct RepeatPair {
    pub dets_i: Vec<SemLs>,
    pub dets_it: Vec<SemLs>,
    pub transform: AffineTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatabilityReport {
    pub thresholds: [f64; 5],
    /// Mean Re over pairs, per threshold.
    pub re: [f64; 5],
    pub mare: f64,
}

/// Mean repeatability over pairs at each threshold, and its mean (mARe).
pub fn mare(pairs: &[RepeatPair], category_agnostic: bool) -> Result<RepeatabilityReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no image pairs".into()));
    }
    let per_pair: Vec<[f64; 5]> = pairs
        .par_iter()
        .map(|p| {
            let mut out = [0.0; 5];
            for (k, &th) in REPEAT_THRESHOLDS.iter().enumerate() {
                out[k] = repeatability(&p.dets_i, &p.dets_it, &p.transform, th, category_agnostic)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut re = [0.0; 5];
    for row in &per_pair {
        for (acc, v) in re.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut re {
        *v /= per_pair.len() as f64;
    }
    Ok(RepeatabilityReport {
        thresholds: REPEAT_THRESHOLDS,
        re,
        mare: re.iter().sum::<f64>() / re.len() as f64,
    })
}
