//! Loop closure detection from semantic segments.
//!
//! Each frame is summarized by its segments in normalized image coordinates.
//! A query votes for database frames whose segments agree in category,
//! angle, center and length; the best-voted frames are then verified with a
//! RANSAC-fitted 2D similarity on the matched segment centers.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::segment::{angle_distance, Point, SemLs};

/// Segment of a frame signature, normalized to the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SignatureSegment {
    pub category: usize,
    /// Degrees in `[0, 180)`.
    pub alpha: f64,
    /// Center divided by image width and height.
    pub center: Point,
    /// Length divided by the image diagonal.
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameSignature {
    pub frame_id: String,
    pub segments: Vec<SignatureSegment>,
    /// Position in meters, for ground truth only.
    pub pose: Option<[f64; 3]>,
}

impl FrameSignature {
    pub fn from_segments(
        frame_id: impl Into<String>,
        segs: &[SemLs],
        width: f64,
        height: f64,
        pose: Option<[f64; 3]>,
    ) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::validation("image size must be positive"));
        }
        let diag = width.hypot(height);
        let segments = segs
            .iter()
            .map(|s| {
                let c = s.center();
                SignatureSegment {
                    category: s.category,
                    alpha: s.angle_deg(),
                    center: Point::new(c.x / width, c.y / height),
                    length: s.length() / diag,
                }
            })
            .collect();
        Ok(Self {
            frame_id: frame_id.into(),
            segments,
            pose,
        })
    }
}

/// Immutable database of frame signatures.
#[derive(Clone, Debug, Default)]
pub struct LcdIndex {
    frames: Vec<FrameSignature>,
    by_category: BTreeMap<usize, BTreeSet<usize>>,
    segment_count: usize,
}

impl LcdIndex {
    pub fn frames(&self) -> &[FrameSignature] {
        &self.frames
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameSignature> {
        self.frames
            .binary_search_by(|f| f.frame_id.as_str().cmp(frame_id))
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Total number of indexed segments.
    pub fn len(&self) -> usize {
        self.segment_count
    }

    pub fn is_empty(&self) -> bool {
        self.segment_count == 0
    }
}

/// Fails on duplicate frame ids. Frames are stored in id order, so the
/// insertion order does not matter.
pub fn build_index(db: Vec<FrameSignature>) -> Result<LcdIndex> {
    let mut frames = db;
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(Error::validation(format!("duplicate frame id `{}`", w[0].frame_id)));
    }
    let mut by_category: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        for s in &f.segments {
            by_category.entry(s.category).or_default().insert(i);
        }
    }
    let segment_count = frames.iter().map(|f| f.segments.len()).sum();
    Ok(LcdIndex {
        frames,
        by_category,
        segment_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoteParams {
    /// Angle gate in degrees.
    pub tau_alpha: f64,
    /// Gate on normalized center distance.
    pub tau_center: f64,
    /// Gate on length difference relative to the query length.
    pub tau_length: f64,
    pub top_k: usize,
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            tau_alpha: 10.0,
            tau_center: 0.1,
            tau_length: 0.2,
            top_k: 100,
        }
    }
}

impl VoteParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_alpha > 0.0 && self.tau_center > 0.0 && self.tau_length > 0.0) {
            return Err(Error::validation("vote tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredFrame {
    pub frame_id: String,
    /// Paired segments over `max(n_query, n_db)`.
    pub score: f64,
    /// `(query segment, db segment)` indices.
    pub pairs: Vec<(usize, usize)>,
}

fn gates(q: &SignatureSegment, d: &SignatureSegment, p: &VoteParams) -> Option<f64> {
    if q.category != d.category {
        return None;
    }
    let dc = q.center.distance(&d.center);
    let ok = angle_distance(q.alpha, d.alpha) <= p.tau_alpha
        && dc <= p.tau_center
        && (q.length - d.length).abs() <= p.tau_length * q.length;
    ok.then_some(dc)
}

/// Greedy pairing: each query segment, in order, takes the nearest unused
/// db segment passing all gates.
pub fn pair_segments(query: &FrameSignature, db: &FrameSignature, params: &VoteParams) -> Vec<(usize, usize)> {
    let mut used = vec![false; db.segments.len()];
    let mut pairs = Vec::new();
    for (qi, q) in query.segments.iter().enumerate() {
        let best = db
            .segments
            .iter()
            .enumerate()
            .filter(|(di, _)| !used[*di])
            .filter_map(|(di, d)| gates(q, d, params).map(|dc| (di, dc)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((di, _)) = best {
            used[di] = true;
            pairs.push((qi, di));
        }
    }
    pairs
}

/// Database frames with at least one pair, best first, at most `top_k`.
pub fn vote_candidates(query: &FrameSignature, index: &LcdIndex, params: &VoteParams) -> Result<Vec<ScoredFrame>> {
    params.validate()?;
    let frames: BTreeSet<usize> = query
        .segments
        .iter()
        .filter_map(|s| index.by_category.get(&s.category))
        .flatten()
        .copied()
        .collect();
    let mut out: Vec<ScoredFrame> = frames
        .into_iter()
        .filter_map(|fi| {
            let db = &index.frames[fi];
            let pairs = pair_segments(query, db, params);
            (!pairs.is_empty()).then(|| ScoredFrame {
                frame_id: db.frame_id.clone(),
                score: pairs.len() as f64 / query.segments.len().max(db.segments.len()) as f64,
                pairs,
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.frame_id.cmp(&b.frame_id)));
    out.truncate(params.top_k);
    Ok(out)
}

/// `z -> a z + t` on the complex plane; `a = scale * e^(i rotation)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Similarity2 {
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity2 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let (ar, ai) = (self.scale * c, self.scale * s);
        Point::new(ar * p.x - ai * p.y + self.tx, ai * p.x + ar * p.y + self.ty)
    }

    fn from_complex(ar: f64, ai: f64, tx: f64, ty: f64) -> Self {
        Self {
            scale: ar.hypot(ai),
            rotation: ai.atan2(ar),
            tx,
            ty,
        }
    }

    /// Exact fit through two correspondences.
    fn from_two(p: [Point; 2], q: [Point; 2]) -> Option<Self> {
        let (dpx, dpy) = (p[1].x - p[0].x, p[1].y - p[0].y);
        let (dqx, dqy) = (q[1].x - q[0].x, q[1].y - q[0].y);
        let den = dpx * dpx + dpy * dpy;
        if den < 1e-18 {
            return None;
        }
        // a = dq / dp
        let ar = (dqx * dpx + dqy * dpy) / den;
        let ai = (dqy * dpx - dqx * dpy) / den;
        let tx = q[0].x - (ar * p[0].x - ai * p[0].y);
        let ty = q[0].y - (ai * p[0].x + ar * p[0].y);
        Some(Self::from_complex(ar, ai, tx, ty))
    }

    /// Least-squares fit over any number of correspondences.
    fn least_squares(p: &[Point], q: &[Point]) -> Option<Self> {
        let n = p.len() as f64;
        let (pmx, pmy) = (
            p.iter().map(|v| v.x).sum::<f64>() / n,
            p.iter().map(|v| v.y).sum::<f64>() / n,
        );
        let (qmx, qmy) = (
            q.iter().map(|v| v.x).sum::<f64>() / n,
            q.iter().map(|v| v.y).sum::<f64>() / n,
        );
        let (mut num_r, mut num_i, mut den) = (0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(q) {
            let (px, py) = (a.x - pmx, a.y - pmy);
            let (qx, qy) = (b.x - qmx, b.y - qmy);
            num_r += qx * px + qy * py;
            num_i += qy * px - qx * py;
            den += px * px + py * py;
        }
        if den < 1e-18 {
            return None;
        }
        let (ar, ai) = (num_r / den, num_i / den);
        Some(Self::from_complex(
            ar,
            ai,
            qmx - (ar * pmx - ai * pmy),
            qmy - (ai * pmx + ar * pmy),
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier radius in normalized image units.
    pub inlier_radius: f64,
    /// Admissible scale range of hypotheses.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_radius: 0.05,
            scale_range: (0.5, 2.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verification {
    /// Inlier count, or the number of pairs when unverified.
    pub score: f64,
    /// Indices into the pair list.
    pub inliers: Vec<usize>,
    pub transform: Option<Similarity2>,
    pub verified: bool,
}

fn count_inliers(t: &Similarity2, p: &[Point], q: &[Point], radius: f64) -> Vec<usize> {
    (0..p.len())
        .filter(|&i| t.apply(p[i]).distance(&q[i]) <= radius)
        .collect()
}

/// RANSAC similarity from query centers to candidate centers of `pairs`.
///
/// Fewer than two pairs cannot be verified; the raw pair count is returned.
pub fn ransac_verify(
    query: &FrameSignature,
    candidate: &FrameSignature,
    pairs: &[(usize, usize)],
    params: &RansacParams,
) -> Verification {
    let p: Vec<Point> = pairs.iter().map(|&(qi, _)| query.segments[qi].center).collect();
    let q: Vec<Point> = pairs.iter().map(|&(_, di)| candidate.segments[di].center).collect();
    if pairs.len() < 2 {
        return Verification {
            score: pairs.len() as f64,
            inliers: (0..pairs.len()).collect(),
            transform: None,
            verified: false,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (lo, hi) = params.scale_range;
    let mut best: Option<(Similarity2, Vec<usize>)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..p.len());
        let mut j = rng.random_range(0..p.len() - 1);
        if j >= i {
            j += 1;
        }
        let Some(t) = Similarity2::from_two([p[i], p[j]], [q[i], q[j]]) else {
            continue;
        };
        if !(lo..=hi).contains(&t.scale) {
            continue;
        }
        let inl = count_inliers(&t, &p, &q, params.inlier_radius);
        if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
            best = Some((t, inl));
        }
    }
    let Some((mut t, mut inl)) = best else {
        return Verification {
            score: 0.0,
            inliers: Vec::new(),
            transform: None,
            verified: true,
        };
    };
    let sub = |idx: &[usize], v: &[Point]| idx.iter().map(|&k| v[k]).collect::<Vec<_>>();
    if let Some(refit) = Similarity2::least_squares(&sub(&inl, &p), &sub(&inl, &q)) {
        let again = count_inliers(&refit, &p, &q, params.inlier_radius);
        if again.len() >= inl.len() && (lo..=hi).contains(&refit.scale) {
            t = refit;
            inl = again;
        }
    }
    Verification {
        score: inl.len() as f64,
        inliers: inl,
        transform: Some(t),
        verified: true,
    }
}

/// Best verified database match of one query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopMatch {
    pub query_id: String,
    pub frame_id: Option<String>,
    /// Inlier count of the best candidate, 0 without candidates.
    pub score: f64,
    pub raw_score: f64,
    pub verified: bool,
}

/// Votes, verifies each of the top candidates and keeps the one with most
/// inliers (ties: higher vote score, then smaller frame id).
pub fn best_match(
    query: &FrameSignature,
    index: &LcdIndex,
    vote: &VoteParams,
    ransac: &RansacParams,
) -> Result<LoopMatch> {
    let cands = vote_candidates(query, index, vote)?;
    let mut best = LoopMatch {
        query_id: query.frame_id.clone(),
        frame_id: None,
        score: 0.0,
        raw_score: 0.0,
        verified: false,
    };
    for c in cands {
        let db = index.frame(&c.frame_id).expect("candidate comes from the index");
        let v = ransac_verify(query, db, &c.pairs, ransac);
        let better =
            best.frame_id.is_none() || v.score > best.score || (v.score == best.score && c.score > best.raw_score);
        if better {
            best = LoopMatch {
                query_id: query.frame_id.clone(),
                frame_id: Some(c.frame_id),
                score: v.score,
                raw_score: c.score,
                verified: v.verified,
            };
        }
    }
    Ok(best)
}

/// [`best_match`] for many queries in parallel, in query order.
pub fn detect_loops(
    queries: &[FrameSignature],
    index: &LcdIndex,
    vote: &VoteParams,
    ransac: &RansacParams,
) -> Result<Vec<LoopMatch>> {
    queries.par_iter().map(|q| best_match(q, index, vote, ransac)).collect()
}

/// Database frames within `d_loop` meters of each query.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopGroundTruth {
    pub d_loop: f64,
    pub loops: BTreeMap<String, HashSet<String>>,
}

impl LoopGroundTruth {
    pub fn from_poses(queries: &[FrameSignature], index: &LcdIndex, d_loop: f64) -> Result<Self> {
        if !(d_loop > 0.0) {
            return Err(Error::validation("loop distance must be positive"));
        }
        let mut loops = BTreeMap::new();
        for q in queries {
            let qp = q
                .pose
                .ok_or_else(|| Error::validation(format!("query `{}` has no pose", q.frame_id)))?;
            let near = index
                .frames
                .iter()
                .filter(|f| {
                    f.pose.is_some_and(|p| {
                        let d2: f64 = p.iter().zip(&qp).map(|(a, b)| (a - b) * (a - b)).sum();
                        d2.sqrt() < d_loop
                    })
                })
                .map(|f| f.frame_id.clone())
                .collect();
            loops.insert(q.frame_id.clone(), near);
        }
        Ok(Self { d_loop, loops })
    }

    pub fn has_loop(&self, query_id: &str) -> bool {
        self.loops.get(query_id).is_some_and(|s| !s.is_empty())
    }

    pub fn is_correct(&self, query_id: &str, frame_id: &str) -> bool {
        self.loops.get(query_id).is_some_and(|s| s.contains(frame_id))
    }

    /// Scored outcome of each match for [`recall_at_precision`].
    pub fn outcomes(&self, matches: &[LoopMatch]) -> Vec<QueryOutcome> {
        matches
            .iter()
            .map(|m| QueryOutcome {
                score: m.score,
                correct: m.frame_id.as_deref().is_some_and(|f| self.is_correct(&m.query_id, f)),
                has_loop: self.has_loop(&m.query_id),
            })
            .collect()
    }
}

/// A query's top-match score and whether that match is a true loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub score: f64,
    pub correct: bool,
    pub has_loop: bool,
}

/// Default precision levels.
pub const PRECISION_LEVELS: [f64; 3] = [0.99, 0.95, 0.80];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecallReport {
    /// `(precision level, best recall)`.
    pub levels: Vec<(f64, f64)>,
    /// One point per distinct score, highest threshold first.
    pub roc: Vec<RocPoint>,
}

impl RecallReport {
    pub fn recall_at(&self, precision: f64) -> Option<f64> {
        self.levels.iter().find(|(p, _)| *p == precision).map(|(_, r)| *r)
    }
}

/// Sweeps the acceptance threshold over all distinct scores. Queries scoring
/// at least the threshold are accepted; recall counts against all queries
/// that have a true loop.
pub fn recall_at_precision(outcomes: &[QueryOutcome], precisions: &[f64]) -> Result<RecallReport> {
    let positives = outcomes.iter().filter(|o| o.has_loop).count();
    if positives == 0 {
        return Err(Error::Empty("no query has a true loop; recall is undefined".into()));
    }
    let mut sorted: Vec<&QueryOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut roc = Vec::new();
    let (mut accepted, mut correct) = (0usize, 0usize);
    for (i, o) in sorted.iter().enumerate() {
        accepted += 1;
        correct += usize::from(o.correct);
        let last_of_score = sorted.get(i + 1).is_none_or(|n| n.score != o.score);
        if last_of_score {
            roc.push(RocPoint {
                threshold: o.score,
                precision: correct as f64 / accepted as f64,
                recall: correct as f64 / positives as f64,
            });
        }
    }
    let levels = precisions
        .iter()
        .map(|&p| {
            let r = roc
                .iter()
                .filter(|pt| pt.precision >= p)
                .map(|pt| pt.recall)
                .fold(0.0, f64::max);
            (p, r)
        })
        .collect();
    Ok(RecallReport { levels, roc })
}
