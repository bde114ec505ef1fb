//! Two-view line triangulation and the triplet projection error.
//!
//! A labelled segment seen from a camera spans a plane through the camera
//! center. Two such planes from the `left` and `pre` views intersect in the
//! 3D line, which is projected into the `right` view and compared with the
//! segment labelled there.
//!
//! Cameras are pinhole without distortion; poses map world to camera,
//! `X_c = R X_w + t`, with x right, y down and z along the optical axis.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::segment::{Point, SemLs};

/// Minimum `|n1 x n2|` for two back-projected planes to intersect.
pub const PLANE_PARALLEL_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl CameraView {
    /// Fails unless `r` is a rotation to within `1e-9`.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(fx, fy, cx, cy, r, t, 1e-9)
    }

    pub(crate) fn with_tolerance(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        tol: f64,
    ) -> Result<Self> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::validation(
                "focal lengths must be positive and intrinsics finite",
            ));
        }
        if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
            return Err(Error::validation("pose must be finite"));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > tol {
            return Err(Error::validation(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > tol.max(1e-12) * 10.0 {
            return Err(Error::validation("rotation must have determinant +1"));
        }
        Ok(Self { fx, fy, cx, cy, r, t })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Pixel of a world point, or `None` behind or on the camera plane.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Point> {
        let c = self.r * x + self.t;
        (c.z > 0.0).then(|| Point::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    /// Camera-frame ray through a pixel.
    fn ray(&self, p: Point) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    /// Same camera after moving the world by `X' = q X + s`.
    pub fn transformed(&self, q: &Rotation3<f64>, s: &Vector3<f64>) -> Self {
        let r = self.r * q.matrix().transpose();
        Self {
            r,
            t: self.t - r * s,
            ..*self
        }
    }
}

/// Infinite 3D line with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line3D {
    pub point: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Line3D {
    pub fn new(point: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n > 1e-15) || !point.iter().all(|v| v.is_finite()) {
            return Err(Error::degenerate("line direction must be non-zero"));
        }
        Ok(Self {
            point,
            direction: direction / n,
        })
    }

    pub fn through(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<Self> {
        Self::new(*a, b - a)
    }

    pub fn distance_to(&self, x: &Vector3<f64>) -> f64 {
        (x - self.point).cross(&self.direction).norm()
    }
}

/// Plane `(n, d)` with `n·X + d = 0` and unit `n`, spanned by the camera
/// center and the segment.
pub fn backproject_plane(view: &CameraView, s: &SemLs) -> Result<Vector4<f64>> {
    let [a, b] = s.endpoints();
    let n_c = view.ray(a).cross(&view.ray(b));
    let norm = n_c.norm();
    if !(norm > 1e-15) {
        return Err(Error::degenerate("segment endpoints back-project to parallel rays"));
    }
    let n_c = n_c / norm;
    let n_w = view.r.transpose() * n_c;
    Ok(Vector4::new(n_w.x, n_w.y, n_w.z, n_c.dot(&view.t)))
}

/// Intersection of the planes back-projected from two views.
pub fn triangulate_line(v1: &CameraView, s1: &SemLs, v2: &CameraView, s2: &SemLs) -> Result<Line3D> {
    if (v1.center() - v2.center()).norm() < 1e-12 {
        return Err(Error::degenerate("views share the same camera center"));
    }
    let p1 = backproject_plane(v1, s1)?;
    let p2 = backproject_plane(v2, s2)?;
    let (n1, n2) = (p1.xyz(), p2.xyz());
    let dir = n1.cross(&n2);
    if dir.norm() < PLANE_PARALLEL_EPS {
        return Err(Error::degenerate(
            "back-projected planes are parallel (epipolar configuration)",
        ));
    }
    // point of the line closest to the origin
    let a = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), dir.transpose()]);
    let point = a
        .lu()
        .solve(&Vector3::new(-p1.w, -p2.w, 0.0))
        .ok_or_else(|| Error::degenerate("plane intersection is singular"))?;
    Line3D::new(point, dir)
}

/// Homogeneous image line `(a, b, c)` of a 3D line, scaled so `a² + b² = 1`.
pub fn project_line(view: &CameraView, line: &Line3D) -> Result<Vector3<f64>> {
    if line.distance_to(&view.center()) < 1e-12 {
        return Err(Error::degenerate("line passes through the camera center"));
    }
    let k = view.intrinsics();
    let h1 = k * (view.r * line.point + view.t);
    let h2 = k * (view.r * (line.point + line.direction) + view.t);
    normalize_line(&h1.cross(&h2))
}

pub fn normalize_line(l: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = l.x.hypot(l.y);
    if !(n > 1e-300) || !l.z.is_finite() {
        return Err(Error::degenerate("image line is at infinity"));
    }
    Ok(l / n)
}

/// Mean perpendicular distance of the two endpoints to `l`.
pub fn endpoint_to_line_error(s: &SemLs, l: &Vector3<f64>) -> Result<f64> {
    let l = normalize_line(l)?;
    let d = |p: Point| (l.x * p.x + l.y * p.y + l.z).abs();
    let [a, b] = s.endpoints();
    Ok(0.5 * (d(a) + d(b)))
}

/// A camera together with the segment labelled in its image.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub view: CameraView,
    pub segment: SemLs,
}

/// The same physical segment labelled in three images.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub left: Observation,
    pub pre: Observation,
    pub right: Observation,
}

impl Triplet {
    /// Fails unless all three segments carry the same track id.
    pub fn new(left: Observation, pre: Observation, right: Observation) -> Result<Self> {
        let id = left.segment.track_id;
        if id.is_none() || pre.segment.track_id != id || right.segment.track_id != id {
            return Err(Error::validation("triplet segments must share a track id"));
        }
        Ok(Self { left, pre, right })
    }

    pub fn track_id(&self) -> i64 {
        self.left.segment.track_id.expect("checked on construction")
    }

    /// Distance between the `left` and `pre` camera centers.
    pub fn baseline(&self) -> f64 {
        (self.left.view.center() - self.pre.view.center()).norm()
    }

    /// Endpoint-to-line error in the right image.
    pub fn error(&self) -> Result<f64> {
        let line = triangulate_line(&self.left.view, &self.left.segment, &self.pre.view, &self.pre.segment)?;
        let l = project_line(&self.right.view, &line)?;
        endpoint_to_line_error(&self.right.segment, &l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripletResult {
    pub index: usize,
    pub track_id: i64,
    /// `None` for degenerate geometry.
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub mean: f64,
    pub per_triplet: Vec<TripletResult>,
    pub degenerate: usize,
}

/// Mean right-image error over all non-degenerate triplets.
pub fn triplet_projection_error(triplets: &[Triplet]) -> Result<ProjectionReport> {
    let per_triplet: Vec<TripletResult> = triplets
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let error = match t.error() {
                Ok(e) => Some(e),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(TripletResult {
                index,
                track_id: t.track_id(),
                error,
            })
        })
        .collect::<Result<_>>()?;
    let valid: Vec<f64> = per_triplet.iter().filter_map(|r| r.error).collect();
    if valid.is_empty() {
        return Err(Error::Empty("no non-degenerate triplets".into()));
    }
    Ok(ProjectionReport {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        degenerate: per_triplet.len() - valid.len(),
        per_triplet,
    })
}

/// Parameters of a forward-driving stereo rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticRig {
    pub width: f64,
    pub height: f64,
    pub focal: f64,
    /// Distance travelled between `pre` and `left` (meters).
    pub travel: f64,
    /// Stereo baseline between `left` and `right` (meters).
    pub stereo_baseline: f64,
}

impl Default for SyntheticRig {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 560.0,
            focal: 800.0,
            travel: 8.0,
            stereo_baseline: 0.5,
        }
    }
}

impl SyntheticRig {
    fn camera(&self, center: Vector3<f64>) -> CameraView {
        CameraView {
            fx: self.focal,
            fy: self.focal,
            cx: self.width / 2.0,
            cy: self.height / 2.0,
            r: Matrix3::identity(),
            t: -center,
        }
    }

    /// Cameras `(left, pre, right)`; `pre` sits `travel` meters behind `left`.
    pub fn views(&self) -> (CameraView, CameraView, CameraView) {
        (
            self.camera(Vector3::new(0.0, 0.0, self.travel)),
            self.camera(Vector3::zeros()),
            self.camera(Vector3::new(self.stereo_baseline, 0.0, self.travel)),
        )
    }

    fn inside(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    /// `n` triplets of random roadside segments, each label perturbed by
    /// uniform noise of `±noise_px` per coordinate.
    pub fn triplets(&self, n: usize, noise_px: f64, seed: u64) -> Vec<Triplet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (left, pre, right) = self.views();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let a = Vector3::new(
                side * rng.random_range(2.0..10.0),
                rng.random_range(-4.0..1.5),
                rng.random_range(25.0..60.0),
            );
            // poles, facade edges and oblique edges; nothing along the driving direction
            let dir = match rng.random_range(0..3) {
                0 => Vector3::new(rng.random_range(-0.1..0.1), 1.0, rng.random_range(-0.1..0.1)),
                1 => Vector3::new(1.0, rng.random_range(-0.1..0.1), rng.random_range(-0.3..0.3)),
                _ => Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                ),
            };
            let b = a + dir.normalize() * rng.random_range(1.5..4.0);
            let mut obs = Vec::with_capacity(3);
            for view in [&left, &pre, &right] {
                let (Some(p), Some(q)) = (view.project(&a), view.project(&b)) else {
                    break;
                };
                if !self.inside(p) || !self.inside(q) || p.distance(&q) < 20.0 {
                    break;
                }
                let mut jitter = |p: Point| {
                    Point::new(
                        (p.x + rng.random_range(-1.0..=1.0) * noise_px).clamp(0.0, self.width),
                        (p.y + rng.random_range(-1.0..=1.0) * noise_px).clamp(0.0, self.height),
                    )
                };
                let (p, q) = if noise_px > 0.0 { (jitter(p), jitter(q)) } else { (p, q) };
                let Ok(s) = SemLs::new(p, q, 0) else { break };
                obs.push(Observation {
                    view: *view,
                    segment: s.with_track_id(out.len() as i64),
                });
            }
            if let Ok([l, p, r]) = <[Observation; 3]>::try_from(obs) {
                out.push(Triplet::new(l, p, r).expect("shared track id"));
            }
        }
        out
    }
}
