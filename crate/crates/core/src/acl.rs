//! Angle-Center-Length (ACL) overlap between line segments.
//!
//! ACL replaces box IoU for segments. It is the product of three
//! similarities, each clamped to `[0, 1]`:
//!
//! ```text
//! sim_c = 1 - |c1 - c2| / (0.5 * l1)
//! sim_l = 1 - |l1 - l2| / l1
//! sim_a = 1 - dalpha / 90,  dalpha = circular angle difference in [0, 90]
//! ```
//!
//! The measure is asymmetric: the first argument is always the reference
//! (ground truth, pre-transform segment, or label being refined), and its
//! length normalizes the center and length terms.

use crate::segment::{angle_distance, ObjectBox, Point, SemLs};

/// An ACL value in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AclScore(f64);

impl AclScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<AclScore> for f64 {
    fn from(s: AclScore) -> f64 {
        s.0
    }
}

pub fn sim_center(reference: &SemLs, other: &SemLs) -> f64 {
    let d = reference.center().distance(&other.center());
    (1.0 - d / (0.5 * reference.length())).max(0.0)
}

pub fn sim_length(reference: &SemLs, other: &SemLs) -> f64 {
    let l1 = reference.length();
    (1.0 - (l1 - other.length()).abs() / l1).max(0.0)
}

pub fn sim_angle(reference: &SemLs, other: &SemLs) -> f64 {
    1.0 - angle_distance(reference.angle_deg(), other.angle_deg()) / 90.0
}

/// ACL of `other` against `reference`.
///
/// Returns 0 for differing categories unless `category_agnostic` is set.
pub fn acl(reference: &SemLs, other: &SemLs, category_agnostic: bool) -> AclScore {
    if !category_agnostic && reference.category != other.category {
        return AclScore(0.0);
    }
    let v = sim_angle(reference, other) * sim_center(reference, other) * sim_length(reference, other);
    AclScore(v.clamp(0.0, 1.0))
}

fn rect_iou(a_min: Point, a_max: Point, b_min: Point, b_max: Point) -> f64 {
    let iw = (a_max.x.min(b_max.x) - a_min.x.max(b_min.x)).max(0.0);
    let ih = (a_max.y.min(b_max.y) - a_min.y.max(b_min.y)).max(0.0);
    let inter = iw * ih;
    let area_a = (a_max.x - a_min.x) * (a_max.y - a_min.y);
    let area_b = (b_max.x - b_min.x) * (b_max.y - b_min.y);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn box_iou(a: &ObjectBox, b: &ObjectBox) -> f64 {
    rect_iou(a.min, a.max, b.min, b.max)
}

/// IoU of the axis-aligned minimum bounding boxes of two segments.
///
/// Zero when both boxes are degenerate (axis-aligned segments).
pub fn segment_box_iou(a: &SemLs, b: &SemLs) -> f64 {
    let bbox = |s: &SemLs| {
        let [p, q] = s.endpoints();
        (
            Point::new(p.x.min(q.x), p.y.min(q.y)),
            Point::new(p.x.max(q.x), p.y.max(q.y)),
        )
    };
    let (a0, a1) = bbox(a);
    let (b0, b1) = bbox(b);
    rect_iou(a0, a1, b0, b1)
}

/// Which of the three attributes differ between the two segments of a case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttributePattern {
    pub angle_differs: bool,
    pub center_differs: bool,
    pub length_differs: bool,
}

/// A reference/other pair built so that their bounding boxes have a given IoU.
#[derive(Clone, Debug)]
pub struct OverlapCase {
    pub pattern: AttributePattern,
    pub reference: SemLs,
    pub other: SemLs,
}

impl OverlapCase {
    pub fn box_iou(&self) -> f64 {
        segment_box_iou(&self.reference, &self.other)
    }

    pub fn acl(&self) -> f64 {
        acl(&self.reference, &self.other, false).value()
    }
}

fn polar_segment(center: Point, angle_deg: f64, len: f64) -> SemLs {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (hx, hy) = (0.5 * len * c, 0.5 * len * s);
    SemLs::from_coords(center.x - hx, center.y - hy, center.x + hx, center.y + hy, 0).expect("positive length")
}

/// Bisection for a root of a continuous `f` with `f(lo) > 0 > f(hi)`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Seven segment pairs whose bounding boxes all share the same IoU, one per
/// non-trivial combination of differing angle, center and length.
///
/// Box IoU cannot tell these apart; ACL can.
pub fn equal_iou_cases(target_iou: f64) -> Vec<OverlapCase> {
    assert!(target_iou > 0.0 && target_iou < 1.0);
    let c0 = Point::new(200.0, 200.0);
    let (theta, len) = (30.0_f64, 100.0_f64);
    let reference = polar_segment(c0, theta, len);
    let iou_to = |o: &SemLs| segment_box_iou(&reference, o);
    let dir = {
        let (s, c) = theta.to_radians().sin_cos();
        Point::new(c, s)
    };
    let along = |t: f64| Point::new(c0.x + t * dir.x, c0.y + t * dir.y);
    let shifted_x = |t: f64| Point::new(c0.x + t, c0.y);

    let scale = target_iou.sqrt();
    // Collinear shift t (in units of length) keeps IoU = (1-t)^2 / (2 - (1-t)^2).
    let shift = 1.0 - (2.0 * target_iou / (1.0 + target_iou)).sqrt();
    let rot = bisect(0.0, 30.0, |phi| {
        iou_to(&polar_segment(c0, theta + phi, len)) - target_iou
    });
    let tilt = 10.0;
    let t_ac = bisect(0.0, 100.0, |t| {
        iou_to(&polar_segment(shifted_x(t), theta + tilt, len)) - target_iou
    });
    let s_al = bisect(1.0, 3.0, |s| {
        iou_to(&polar_segment(c0, theta + tilt, s * len)) - target_iou
    });
    let t_acl = bisect(0.0, 100.0, |t| {
        iou_to(&polar_segment(shifted_x(t), theta + tilt, 1.1 * len)) - target_iou
    });

    let p1 = reference.p1();
    let sub = {
        let q = Point::new(p1.x + scale * len * dir.x, p1.y + scale * len * dir.y);
        SemLs::new(p1, q, 0).expect("positive length")
    };

    let pat = |a, c, l| AttributePattern {
        angle_differs: a,
        center_differs: c,
        length_differs: l,
    };
    let cases = vec![
        (pat(false, false, true), polar_segment(c0, theta, scale * len)),
        (pat(false, true, false), polar_segment(along(shift * len), theta, len)),
        (pat(true, false, false), polar_segment(c0, theta + rot, len)),
        (pat(false, true, true), sub),
        (
            pat(true, true, false),
            polar_segment(shifted_x(t_ac), theta + tilt, len),
        ),
        (pat(true, false, true), polar_segment(c0, theta + tilt, s_al * len)),
        (
            pat(true, true, true),
            polar_segment(shifted_x(t_acl), theta + tilt, 1.1 * len),
        ),
    ];
    cases
        .into_iter()
        .map(|(pattern, other)| OverlapCase {
            pattern,
            reference: reference.clone(),
            other,
        })
        .collect()
}
