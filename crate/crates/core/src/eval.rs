//! Detection evaluation with ACL in place of IoU.
//!
//! Matching and averaging follow the COCO recipe: detections are matched
//! greedily in descending confidence, AP is the 101-point interpolated area
//! under the precision/recall curve, and the headline number averages AP over
//! ten overlap thresholds `0.50, 0.55, ..., 0.95` and over categories.
//! Detections below a confidence floor of 0.5 are dropped before anything
//! else happens.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::acl::{acl, box_iou};
use crate::segment::{CategoryRegistry, ObjectBox, SemLs};

/// Minimum detection confidence considered by [`evaluate`].
pub const CONFIDENCE_FLOOR: f64 = 0.5;

/// Categories averaged by the restricted metric.
pub const MAP3_CATEGORIES: [&str; 3] = ["pole", "building", "curb"];

/// Number of recall sample points used for interpolated AP.
pub const RECALL_POINTS: usize = 101;

/// The ten overlap thresholds `0.50, 0.55, ..., 0.95`.
pub fn overlap_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Something that can be scored as ground truth or detection.
pub trait Evaluable: Clone + Send + Sync {
    fn category(&self) -> usize;
    /// Detection confidence; ground truth records may leave it unset.
    fn confidence(&self) -> Option<f64>;
    /// Overlap of a detection against a ground-truth item, in `[0, 1]`.
    fn overlap(gt: &Self, det: &Self) -> f64;
    /// Geometry key used to make evaluation independent of input order.
    fn sort_key(&self) -> [f64; 4];
}

impl Evaluable for SemLs {
    fn category(&self) -> usize {
        self.category
    }

    fn confidence(&self) -> Option<f64> {
        self.confidence
    }

    fn overlap(gt: &Self, det: &Self) -> f64 {
        acl(gt, det, false).value()
    }

    fn sort_key(&self) -> [f64; 4] {
        let [p, q] = self.endpoints();
        [p.x, p.y, q.x, q.y]
    }
}

impl Evaluable for ObjectBox {
    fn category(&self) -> usize {
        self.category
    }

    fn confidence(&self) -> Option<f64> {
        self.confidence
    }

    fn overlap(gt: &Self, det: &Self) -> f64 {
        if gt.category != det.category {
            return 0.0;
        }
        box_iou(gt, det)
    }

    fn sort_key(&self) -> [f64; 4] {
        [self.min.x, self.min.y, self.max.x, self.max.y]
    }
}

/// Per-image lists of segments (or boxes), keyed by image id.
pub type DetectionSet<T = SemLs> = BTreeMap<String, Vec<T>>;

/// Order in which detections are matched: descending confidence, ties by
/// input position.
fn confidence_order<T: Evaluable>(det: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..det.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = det[a].confidence().unwrap_or(1.0);
        let cb = det[b].confidence().unwrap_or(1.0);
        cb.total_cmp(&ca)
    });
    order
}

/// Greedy confidence-ordered matching within one image.
///
/// Returns, for every detection (input order), the index of the matched
/// ground-truth item. A detection matches the unmatched same-category
/// ground truth with the highest overlap, provided that overlap is at least
/// `threshold`; ties go to the earlier ground truth.
pub fn match_detections<T: Evaluable>(gt: &[T], det: &[T], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gt.len()];
    let mut matches = vec![None; det.len()];
    for d in confidence_order(det) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt_item) in gt.iter().enumerate() {
            if taken[g] || gt_item.category() != det[d].category() {
                continue;
            }
            let ov = T::overlap(gt_item, &det[d]);
            if ov >= threshold && best.is_none_or(|(_, b)| ov > b) {
                best = Some((g, ov));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matches[d] = Some(g);
        }
    }
    matches
}

/// Interpolated precision at the 101 recall points `0.00, 0.01, ..., 1.00`.
///
/// `tp` lists detections sorted by descending confidence, `true` for a
/// match. Returns `None` when there is neither ground truth nor detection.
pub fn interpolated_precision(tp: &[bool], n_gt: usize) -> Option<Vec<f64>> {
    if n_gt == 0 {
        return if tp.is_empty() {
            None
        } else {
            Some(vec![0.0; RECALL_POINTS])
        };
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // precision envelope, monotone from the right
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let samples = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    Some(samples)
}

/// 101-point interpolated average precision.
///
/// `None` means the category should be skipped (no ground truth and no
/// detections). With detections but no ground truth the AP is 0.
pub fn average_precision(tp: &[bool], n_gt: usize) -> Option<f64> {
    interpolated_precision(tp, n_gt).map(|p| p.iter().sum::<f64>() / p.len() as f64)
}

/// Results for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryResult {
    pub category: usize,
    pub name: Option<String>,
    pub n_gt: usize,
    pub n_det: usize,
    /// AP at each of the ten overlap thresholds.
    pub ap_per_threshold: [f64; 10],
    /// Mean of `ap_per_threshold`.
    pub ap: f64,
    /// Interpolated precision at the 101 recall points, per threshold.
    pub pr_curves: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<CategoryResult>,
    /// Mean AP over all evaluated categories and thresholds.
    pub map: Option<f64>,
    /// Same, restricted to pole, building and curb.
    pub map3: Option<f64>,
    /// Set when the ground truth contains no items at all.
    pub empty_ground_truth: bool,
}

impl EvalReport {
    pub fn category(&self, idx: usize) -> Option<&CategoryResult> {
        self.categories.iter().find(|c| c.category == idx)
    }
}

struct Hit {
    confidence: f64,
    image: usize,
    rank: usize,
    tp: bool,
}

fn sorted_by_key<T: Evaluable>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| {
        a.category().cmp(&b.category()).then_with(|| {
            a.sort_key()
                .iter()
                .zip(b.sort_key().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    });
    v
}

/// Evaluates `det` against `gt`.
///
/// Images present in only one of the two sets contribute unmatched ground
/// truth or false positives respectively. Categories with neither ground
/// truth nor (confident) detections are left out of the averages.
pub fn evaluate<T: Evaluable>(gt: &DetectionSet<T>, det: &DetectionSet<T>, registry: &CategoryRegistry) -> EvalReport {
    let image_ids: Vec<&String> = gt
        .keys()
        .chain(det.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let thresholds = overlap_thresholds();

    // Per image: content-sorted gt and confident detections.
    let per_image: Vec<(Vec<T>, Vec<T>)> = image_ids
        .iter()
        .map(|id| {
            let g = gt.get(*id).map(|v| sorted_by_key(v)).unwrap_or_default();
            let d: Vec<T> = det
                .get(*id)
                .map(|v| {
                    v.iter()
                        .filter(|x| x.confidence().unwrap_or(0.0) >= CONFIDENCE_FLOOR)
                        .cloned()
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            (g, sorted_by_key(&d))
        })
        .collect();

    let categories: BTreeSet<usize> = per_image
        .iter()
        .flat_map(|(g, d)| g.iter().chain(d.iter()).map(Evaluable::category))
        .collect();

    // hits[category][threshold] collected per image in parallel.
    let per_image_hits: Vec<BTreeMap<usize, Vec<Vec<Hit>>>> = per_image
        .par_iter()
        .enumerate()
        .map(|(image, (g, d))| {
            let mut out = BTreeMap::new();
            for &k in &categories {
                let gk: Vec<T> = g.iter().filter(|x| x.category() == k).cloned().collect();
                let dk: Vec<T> = d.iter().filter(|x| x.category() == k).cloned().collect();
                if dk.is_empty() {
                    continue;
                }
                let order = confidence_order(&dk);
                let per_t = thresholds
                    .iter()
                    .map(|&t| {
                        let m = match_detections(&gk, &dk, t);
                        order
                            .iter()
                            .enumerate()
                            .map(|(rank, &di)| Hit {
                                confidence: dk[di].confidence().unwrap_or(0.0),
                                image,
                                rank,
                                tp: m[di].is_some(),
                            })
                            .collect()
                    })
                    .collect();
                out.insert(k, per_t);
            }
            out
        })
        .collect();

    let mut results = Vec::new();
    for &k in &categories {
        let n_gt: usize = per_image
            .iter()
            .map(|(g, _)| g.iter().filter(|x| x.category() == k).count())
            .sum();
        let n_det: usize = per_image
            .iter()
            .map(|(_, d)| d.iter().filter(|x| x.category() == k).count())
            .sum();
        let mut ap_per_threshold = [0.0; 10];
        let mut pr_curves = Vec::with_capacity(thresholds.len());
        for ti in 0..thresholds.len() {
            let mut hits: Vec<&Hit> = per_image_hits
                .iter()
                .filter_map(|m| m.get(&k))
                .flat_map(|per_t| per_t[ti].iter())
                .collect();
            hits.sort_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then(a.image.cmp(&b.image))
                    .then(a.rank.cmp(&b.rank))
            });
            let tp: Vec<bool> = hits.iter().map(|h| h.tp).collect();
            let curve = interpolated_precision(&tp, n_gt).expect("category has gt or detections");
            ap_per_threshold[ti] = curve.iter().sum::<f64>() / curve.len() as f64;
            pr_curves.push(curve);
        }
        results.push(CategoryResult {
            category: k,
            name: registry.name(k).map(str::to_owned),
            n_gt,
            n_det,
            ap: ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64,
            ap_per_threshold,
            pr_curves,
        });
    }

    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let map = mean(results.iter().map(|c| c.ap).collect());
    let map3 = mean(
        results
            .iter()
            .filter(|c| c.name.as_deref().is_some_and(|n| MAP3_CATEGORIES.contains(&n)))
            .map(|c| c.ap)
            .collect(),
    );
    EvalReport {
        categories: results,
        map,
        map3,
        empty_ground_truth: gt.values().all(Vec::is_empty),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seg(x1: f64, y1: f64, x2: f64, y2: f64, k: usize) -> SemLs {
        SemLs::from_coords(x1, y1, x2, y2, k).unwrap()
    }

    fn det(s: &SemLs, c: f64) -> SemLs {
        s.clone().with_confidence(c).unwrap()
    }

    #[test]
    fn thresholds() {
        let t = overlap_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        assert_eq!(t.len(), 10);
    }

    #[test]
    fn identical_detection_matches_at_any_threshold() {
        let g = vec![seg(0., 0., 10., 0., 0)];
        let d = vec![det(&g[0], 0.9)];
        for t in [0.0, 0.5, 0.95, 1.0] {
            assert_eq!(match_detections(&g, &d, t), vec![Some(0)]);
        }
    }

    #[test]
    fn wrong_category_is_unmatched() {
        let g = vec![seg(0., 0., 10., 0., 0)];
        let d = vec![det(&seg(0., 0., 10., 0., 1), 0.9)];
        assert_eq!(match_detections(&g, &d, 0.5), vec![None]);
    }

    /// Exhaustive oracle: over all partial injective assignments of
    /// detections (in confidence order) to admissible ground truth, pick the
    /// lexicographically best sequence of (overlap, earlier gt).
    fn exhaustive_match(gt: &[SemLs], dets: &[SemLs], t: f64) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].confidence.unwrap().total_cmp(&dets[a].confidence.unwrap()));
        fn rec(
            i: usize,
            order: &[usize],
            gt: &[SemLs],
            dets: &[SemLs],
            t: f64,
            used: &mut Vec<bool>,
            cur: &mut Vec<Option<usize>>,
            best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
        ) {
            if i == order.len() {
                let key: Vec<(f64, i64)> = order
                    .iter()
                    .map(|&d| match cur[d] {
                        Some(g) => (acl(&gt[g], &dets[d], false).value(), -(g as i64)),
                        None => (-1.0, 0),
                    })
                    .collect();
                let better = match best {
                    None => true,
                    Some((bk, _)) => {
                        key.iter()
                            .zip(bk.iter())
                            .map(|(a, b)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                            .find(|o| o.is_ne())
                            == Some(Ordering::Greater)
                    }
                };
                if better {
                    *best = Some((key, cur.clone()));
                }
                return;
            }
            let d = order[i];
            cur[d] = None;
            rec(i + 1, order, gt, dets, t, used, cur, best);
            for g in 0..gt.len() {
                if !used[g] && gt[g].category == dets[d].category && acl(&gt[g], &dets[d], false).value() >= t {
                    used[g] = true;
                    cur[d] = Some(g);
                    rec(i + 1, order, gt, dets, t, used, cur, best);
                    used[g] = false;
                    cur[d] = None;
                }
            }
        }
        let mut best = None;
        rec(
            0,
            &order,
            gt,
            dets,
            t,
            &mut vec![false; gt.len()],
            &mut vec![None; dets.len()],
            &mut best,
        );
        best.unwrap().1
    }

    #[test]
    fn greedy_matching_agrees_with_exhaustive_oracle() {
        let g = vec![seg(0., 0., 10., 0., 0), seg(0., 5., 10., 5., 0)];
        let d = vec![
            det(&seg(1., 0., 10., 0., 0), 0.7),
            det(&seg(0., 4.5, 10., 4.5, 0), 0.9),
            det(&seg(0., 0.5, 10., 0.5, 0), 0.8),
        ];
        for t in overlap_thresholds() {
            assert_eq!(match_detections(&g, &d, t), exhaustive_match(&g, &d, t), "t={t}");
        }
        // at 0.5: det1 (0.9) -> gt1, det2 (0.8) -> gt0, det0 left over
        assert_eq!(match_detections(&g, &d, 0.5), vec![None, Some(1), Some(0)]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        assert_eq!(average_precision(&[false, false], 3), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[false], 0), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
        // [TP, FP, TP], 2 gt: (r, p) = (0.5, 1), (0.5, 0.5), (1, 2/3).
        // Recall points 0..=0.50 see precision 1, 0.51..=1.00 see 2/3.
        let expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert_abs_diff_eq!(
            average_precision(&[true, false, true], 2).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ap_matches_brute_force_interpolation() {
        let tp = [true, false, true, true, false, false, true];
        let n_gt = 5;
        // brute force: interpolated precision = max precision at recall >= r
        let pts: Vec<(f64, f64)> = (0..tp.len())
            .map(|i| {
                let h = tp[..=i].iter().filter(|&&x| x).count() as f64;
                (h / n_gt as f64, h / (i + 1) as f64)
            })
            .collect();
        let bf = (0..101)
            .map(|k| {
                let r = k as f64 / 100.0;
                pts.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 101.0;
        assert_abs_diff_eq!(average_precision(&tp, n_gt).unwrap(), bf, epsilon = 1e-15);
    }

    fn set(items: Vec<(&str, Vec<SemLs>)>) -> DetectionSet {
        items.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    #[test]
    fn perfect_detections_score_one() {
        let reg = CategoryRegistry::default();
        let g = set(vec![
            ("a", vec![seg(0., 0., 50., 0., 0), seg(5., 5., 5., 60., 1)]),
            ("b", vec![seg(10., 10., 40., 30., 2)]),
        ]);
        let d: DetectionSet = g
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|s| det(s, 0.9)).collect()))
            .collect();
        let r = evaluate(&g, &d, &reg);
        assert_eq!(r.map, Some(1.0));
        assert_eq!(r.map3, Some(1.0));
        assert!(!r.empty_ground_truth);

        let low: DetectionSet = g
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|s| det(s, 0.4)).collect()))
            .collect();
        let r = evaluate(&g, &low, &reg);
        assert_eq!(r.map, Some(0.0));
    }

    #[test]
    fn empty_ground_truth_is_flagged() {
        let reg = CategoryRegistry::default();
        let g: DetectionSet = DetectionSet::new();
        let r = evaluate(&g, &DetectionSet::new(), &reg);
        assert!(r.empty_ground_truth);
        assert_eq!(r.map, None);
        let d = set(vec![("a", vec![det(&seg(0., 0., 10., 0., 0), 0.9)])]);
        let r = evaluate(&g, &d, &reg);
        assert!(r.empty_ground_truth);
        assert_eq!(r.map, Some(0.0));
    }

    #[test]
    fn map3_equals_map_on_three_categories() {
        let reg = CategoryRegistry::default();
        let g = set(vec![(
            "a",
            vec![
                seg(0., 0., 50., 0., 0),
                seg(5., 5., 5., 60., 1),
                seg(10., 10., 40., 30., 2),
            ],
        )]);
        let d = set(vec![(
            "a",
            vec![
                det(&seg(0., 1., 50., 1., 0), 0.9),
                det(&seg(5., 5., 5., 40., 1), 0.8),
                det(&seg(80., 10., 90., 30., 2), 0.7),
            ],
        )]);
        let r = evaluate(&g, &d, &reg);
        assert_eq!(r.map, r.map3);
        assert!(r.map.unwrap() > 0.0 && r.map.unwrap() < 1.0);
    }

    #[test]
    fn boxes_use_iou() {
        let reg = CategoryRegistry::default();
        let b = ObjectBox::new((0., 0.).into(), (10., 10.).into(), 0).unwrap();
        let mut d = b.clone();
        d.confidence = Some(0.9);
        let g: DetectionSet<ObjectBox> = [("x".to_owned(), vec![b])].into();
        let dd: DetectionSet<ObjectBox> = [("x".to_owned(), vec![d])].into();
        assert_eq!(evaluate(&g, &dd, &reg).map, Some(1.0));
    }
}
