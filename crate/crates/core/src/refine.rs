//! Snapping labelled segments onto image gradients.
//!
//! A small gradient-based line detector proposes candidate segments; a label
//! is replaced by the candidate it overlaps best when that overlap (ACL with
//! the label as reference, categories ignored) exceeds a threshold.
//!
//! Image coordinates put pixel `(i, j)` on the unit square `[i, i+1) x [j, j+1)`,
//! so the boundary between columns 49 and 50 is the line `x = 50`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::acl::acl;
use crate::error::{Error, Result};
use crate::segment::{angle_distance, fold_angle, Point, SemLs};

/// Default overlap a candidate must exceed to replace a label.
pub const REFINE_THRESHOLD: f64 = 0.95;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Gradients on the `(width-1) x (height-1)` grid of 2x2 cells. Cell `(x, y)`
/// sits at the shared corner `(x+1, y+1)` of its four pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    /// Indexed `[y, x]`.
    pub magnitude: Array2<f64>,
    /// Level-line orientation in degrees, `[0, 180)`.
    pub angle: Array2<f64>,
}

impl GradientField {
    pub fn compute(img: &GrayImage) -> Self {
        let (w, h) = (img.width.saturating_sub(1), img.height.saturating_sub(1));
        let mut mag = vec![0.0; w * h];
        let mut ang = vec![0.0; w * h];
        if w > 0 && h > 0 {
            mag.par_chunks_mut(w)
                .zip(ang.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, (mrow, arow))| {
                    for x in 0..w {
                        let a = img.get(x, y) as f64;
                        let b = img.get(x + 1, y) as f64;
                        let c = img.get(x, y + 1) as f64;
                        let d = img.get(x + 1, y + 1) as f64;
                        let gx = 0.5 * (b + d - a - c);
                        let gy = 0.5 * (c + d - a - b);
                        mrow[x] = gx.hypot(gy);
                        // the level line runs perpendicular to the gradient
                        arow[x] = fold_angle(gx.atan2(-gy).to_degrees());
                    }
                });
        }
        Self {
            magnitude: Array2::from_shape_vec((h, w), mag).expect("sized above"),
            angle: Array2::from_shape_vec((h, w), ang).expect("sized above"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateParams {
    /// Gradient magnitude below which cells are ignored.
    pub rho: f64,
    /// Level-line angle tolerance in degrees.
    pub tau_deg: f64,
    pub min_len: f64,
    pub max_rms: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            // a two-gray-level step across the cell
            rho: 2.0,
            tau_deg: 22.5,
            min_len: 15.0,
            max_rms: 1.5,
        }
    }
}

/// Category-free segment with the number of cells supporting it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub p1: Point,
    pub p2: Point,
    pub support: usize,
    pub rms: f64,
}

impl Candidate {
    pub fn new(p1: Point, p2: Point) -> Self {
        Self {
            p1,
            p2,
            support: 0,
            rms: 0.0,
        }
    }

    pub fn segment(&self, category: usize) -> Result<SemLs> {
        SemLs::new(self.p1, self.p2, category)
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(&self.p2)
    }
}

fn doubled(angle_deg: f64) -> (f64, f64) {
    let (s, c) = (2.0 * angle_deg).to_radians().sin_cos();
    (c, s)
}

/// Weighted total-least-squares fit of cell positions; returns the segment
/// spanning the extremal projections and the RMS residual.
fn fit_region(cells: &[(usize, usize)], field: &GradientField) -> (Point, Point, f64) {
    let pos = |&(x, y): &(usize, usize)| (x as f64 + 1.0, y as f64 + 1.0);
    let weight = |&(x, y): &(usize, usize)| field.magnitude[[y, x]];
    let sw: f64 = cells.iter().map(weight).sum();
    let (mut mx, mut my) = (0.0, 0.0);
    for c in cells {
        let (px, py) = pos(c);
        mx += weight(c) * px;
        my += weight(c) * py;
    }
    let (mx, my) = (mx / sw, my / sw);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in cells {
        let (px, py) = pos(c);
        let (dx, dy, w) = (px - mx, py - my, weight(c));
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (dy, dx) = phi.sin_cos();
    let (mut tmin, mut tmax, mut res2) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for c in cells {
        let (px, py) = pos(c);
        let t = dx * (px - mx) + dy * (py - my);
        let n = -dy * (px - mx) + dx * (py - my);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
        res2 += weight(c) * n * n;
    }
    // each cell covers half a pixel beyond its center
    let (t0, t1) = (tmin - 0.5, tmax + 0.5);
    (
        Point::new(mx + t0 * dx, my + t0 * dy),
        Point::new(mx + t1 * dx, my + t1 * dy),
        (res2 / sw).sqrt(),
    )
}

/// Line-segment candidates by region growing on level-line orientation.
///
/// Seeds are taken in decreasing gradient magnitude. Results are sorted by
/// support, largest first.
pub fn gradient_candidates(img: &GrayImage, params: &CandidateParams) -> Vec<Candidate> {
    let field = GradientField::compute(img);
    let (h, w) = field.magnitude.dim();
    let mut seeds: Vec<(usize, usize)> = field
        .magnitude
        .indexed_iter()
        .filter(|(_, &m)| m >= params.rho)
        .map(|((y, x), _)| (x, y))
        .collect();
    seeds.sort_by(|a, b| field.magnitude[[b.1, b.0]].total_cmp(&field.magnitude[[a.1, a.0]]));

    let mut used = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    for seed in seeds {
        if used[[seed.1, seed.0]] {
            continue;
        }
        used[[seed.1, seed.0]] = true;
        let mut region = vec![seed];
        let (mut sc, mut ss) = doubled(field.angle[[seed.1, seed.0]]);
        let mut region_angle = field.angle[[seed.1, seed.0]];
        let mut i = 0;
        while i < region.len() {
            let (cx, cy) = region[i];
            i += 1;
            for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    if used[[ny, nx]] || field.magnitude[[ny, nx]] < params.rho {
                        continue;
                    }
                    let a = field.angle[[ny, nx]];
                    if angle_distance(a, region_angle) > params.tau_deg {
                        continue;
                    }
                    used[[ny, nx]] = true;
                    region.push((nx, ny));
                    let (c, s) = doubled(a);
                    sc += c;
                    ss += s;
                    region_angle = fold_angle(0.5 * ss.atan2(sc).to_degrees());
                }
            }
        }
        let (p1, p2, rms) = fit_region(&region, &field);
        if p1.distance(&p2) >= params.min_len && rms <= params.max_rms {
            out.push(Candidate {
                p1,
                p2,
                support: region.len(),
                rms,
            });
        }
    }
    out.sort_by_key(|c| std::cmp::Reverse(c.support));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelChange {
    pub index: usize,
    pub candidate: usize,
    pub acl: f64,
    /// Largest endpoint displacement.
    pub moved: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RefineReport {
    pub replaced: usize,
    pub kept: usize,
    pub changes: Vec<LabelChange>,
}

/// Replaces each label by its best candidate when their ACL exceeds `threshold`.
///
/// Category, confidence and track id are kept; only the endpoints change.
pub fn refine_labels(labels: &[SemLs], candidates: &[Candidate], threshold: f64) -> (Vec<SemLs>, RefineReport) {
    let cands: Vec<(usize, SemLs)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.segment(0).ok().map(|s| (i, s)))
        .collect();
    let mut report = RefineReport::default();
    let refined = labels
        .iter()
        .enumerate()
        .map(|(index, label)| {
            let best = cands.iter().map(|(i, c)| (*i, c, acl(label, c, true).value())).fold(
                None,
                |best: Option<(usize, &SemLs, f64)>, cur| match best {
                    Some(b) if b.2 >= cur.2 => Some(b),
                    _ => Some(cur),
                },
            );
            match best {
                Some((candidate, c, score)) if score > threshold => {
                    let [p1, p2] = c.endpoints();
                    let out = label.with_geometry(p1, p2).expect("candidate has positive length");
                    report.replaced += 1;
                    report.changes.push(LabelChange {
                        index,
                        candidate,
                        acl: score,
                        moved: out.endpoint_error(label),
                    });
                    out
                }
                _ => {
                    report.kept += 1;
                    label.clone()
                }
            }
        })
        .collect();
    (refined, report)
}
