//! Semantic line segments and their encodings.
//!
//! A [`SemLs`] is stored by its two endpoints in image coordinates (x to the
//! right, y downwards). Two alternative encodings are provided:
//!
//! - [`AngMidLen`]: undirected angle in degrees, midpoint and length.
//! - [`GeneralEncoding`]: the segment as the diagonal of its minimum bounding
//!   box plus a direction flag, which also represents plain object boxes.
//!
//! All conversions are lossless up to floating point rounding.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in image coordinates (pixels).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn lex_cmp(&self, other: &Point) -> Ordering {
        self.x.total_cmp(&other.x).then_with(|| self.y.total_cmp(&other.y))
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

/// Orders two endpoints lexicographically by `(x, y)`.
///
/// Fails when the points coincide or are not finite.
pub fn canonicalize(p1: Point, p2: Point) -> Result<(Point, Point)> {
    if !p1.is_finite() || !p2.is_finite() {
        return Err(Error::validation("segment endpoints must be finite"));
    }
    if p1 == p2 {
        return Err(Error::validation(format!(
            "degenerate segment: both endpoints at ({}, {})",
            p1.x, p1.y
        )));
    }
    match p1.lex_cmp(&p2) {
        Ordering::Greater => Ok((p2, p1)),
        _ => Ok((p1, p2)),
    }
}

/// Folds an angle in degrees into `[0, 180)`.
pub fn fold_angle(deg: f64) -> f64 {
    let mut a = deg.rem_euclid(180.0);
    if a >= 180.0 {
        a -= 180.0;
    }
    a
}

/// Circular distance between two undirected angles (degrees), in `[0, 90]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (fold_angle(a) - fold_angle(b)).abs();
    d.min(180.0 - d)
}

/// A labeled line segment.
///
/// Endpoints are kept in canonical order; construct through [`SemLs::new`]
/// so the invariants hold.
#[derive(Clone, Debug, PartialEq)]
pub struct SemLs {
    p1: Point,
    p2: Point,
    pub category: usize,
    pub confidence: Option<f64>,
    pub track_id: Option<i64>,
}

impl SemLs {
    pub fn new(p1: impl Into<Point>, p2: impl Into<Point>, category: usize) -> Result<Self> {
        let (p1, p2) = canonicalize(p1.into(), p2.into())?;
        Ok(Self {
            p1,
            p2,
            category,
            confidence: None,
            track_id: None,
        })
    }

    /// Shorthand for `SemLs::new((x1, y1), (x2, y2), category)`.
    pub fn from_coords(x1: f64, y1: f64, x2: f64, y2: f64, category: usize) -> Result<Self> {
        Self::new((x1, y1), (x2, y2), category)
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(format!("confidence {confidence} outside [0, 1]")));
        }
        self.confidence = Some(confidence);
        Ok(self)
    }

    pub fn with_track_id(mut self, track_id: i64) -> Self {
        self.track_id = Some(track_id);
        self
    }

    pub fn p1(&self) -> Point {
        self.p1
    }

    pub fn p2(&self) -> Point {
        self.p2
    }

    pub fn endpoints(&self) -> [Point; 2] {
        [self.p1, self.p2]
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(&self.p2)
    }

    pub fn center(&self) -> Point {
        self.p1.midpoint(&self.p2)
    }

    /// Undirected angle against the positive x-axis, in `[0, 180)` degrees.
    pub fn angle_deg(&self) -> f64 {
        fold_angle((self.p2.y - self.p1.y).atan2(self.p2.x - self.p1.x).to_degrees())
    }

    /// Same labels, new geometry.
    pub fn with_geometry(&self, p1: Point, p2: Point) -> Result<Self> {
        let (p1, p2) = canonicalize(p1, p2)?;
        Ok(Self { p1, p2, ..self.clone() })
    }

    /// Largest endpoint displacement between two segments (canonical order).
    pub fn endpoint_error(&self, other: &SemLs) -> f64 {
        self.p1.distance(&other.p1).max(self.p2.distance(&other.p2))
    }
}

/// Angle / midpoint / length encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngMidLen {
    /// Degrees in `[0, 180)`.
    pub alpha: f64,
    pub mid: Point,
    /// Pixels, strictly positive.
    pub len: f64,
}

impl AngMidLen {
    pub fn new(alpha: f64, mid: Point, len: f64) -> Result<Self> {
        if !(0.0..180.0).contains(&alpha) {
            return Err(Error::validation(format!("angle {alpha} outside [0, 180)")));
        }
        if !(len > 0.0) || !len.is_finite() || !mid.is_finite() {
            return Err(Error::validation(format!("invalid length {len}")));
        }
        Ok(Self { alpha, mid, len })
    }
}

pub fn encode_angmidlen(s: &SemLs) -> Result<AngMidLen> {
    let len = s.length();
    if !(len > 0.0) {
        return Err(Error::validation("zero-length segment"));
    }
    Ok(AngMidLen {
        alpha: s.angle_deg(),
        mid: s.center(),
        len,
    })
}

/// Reconstructs canonical endpoints from an [`AngMidLen`].
pub fn decode_angmidlen(a: &AngMidLen) -> Result<(Point, Point)> {
    let (sin, cos) = a.alpha.to_radians().sin_cos();
    let hx = 0.5 * a.len * cos;
    let hy = 0.5 * a.len * sin;
    canonicalize(
        Point::new(a.mid.x - hx, a.mid.y - hy),
        Point::new(a.mid.x + hx, a.mid.y + hy),
    )
}

/// Direction flag `d_g` of the general encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Direction {
    /// Segment runs from the left-top corner to the right-bottom corner.
    LeftTopToRightBottom = 0,
    /// Segment runs from the left-bottom corner to the right-top corner.
    LeftBottomToRightTop = 1,
    /// Not a segment: the record is an object bounding box.
    ObjectBox = 2,
}

impl TryFrom<u8> for Direction {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Direction::LeftTopToRightBottom),
            1 => Ok(Direction::LeftBottomToRightTop),
            2 => Ok(Direction::ObjectBox),
            other => Err(Error::validation(format!("direction flag {other} not in {{0, 1, 2}}"))),
        }
    }
}

impl From<Direction> for u8 {
    fn from(d: Direction) -> u8 {
        d as u8
    }
}

/// An axis-aligned object box, `x_min <= x_max`, `y_min <= y_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectBox {
    pub min: Point,
    pub max: Point,
    pub category: usize,
    pub confidence: Option<f64>,
}

impl ObjectBox {
    pub fn new(a: Point, b: Point, category: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::validation("box corners must be finite"));
        }
        Ok(Self {
            min: Point::new(a.x.min(b.x), a.y.min(b.y)),
            max: Point::new(a.x.max(b.x), a.y.max(b.y)),
            category,
            confidence: None,
        })
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// The general (line-as-object) record: box geometry, direction and category.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralEncoding {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
    pub direction: Direction,
    pub category: usize,
}

impl GeneralEncoding {
    /// Builds a record from raw fields, validating the direction flag.
    pub fn from_raw(xc: f64, yc: f64, w: f64, h: f64, d_g: u8, category: usize) -> Result<Self> {
        let direction = Direction::try_from(d_g)?;
        if !(w >= 0.0 && h >= 0.0) || !xc.is_finite() || !yc.is_finite() {
            return Err(Error::validation(format!("invalid box geometry w={w} h={h}")));
        }
        Ok(Self {
            xc,
            yc,
            w,
            h,
            direction,
            category,
        })
    }

    pub fn d_g(&self) -> u8 {
        self.direction.into()
    }

    pub fn is_segment(&self) -> bool {
        self.direction != Direction::ObjectBox
    }
}

/// Encodes a segment as the diagonal of its bounding box.
///
/// Axis-aligned segments always get `d_g = 0`.
pub fn encode_general(s: &SemLs) -> GeneralEncoding {
    let (p1, p2) = (s.p1(), s.p2());
    let c = s.center();
    // Canonical order guarantees p2.x >= p1.x, so only the sign of dy matters.
    let direction = if p2.y - p1.y >= 0.0 {
        Direction::LeftTopToRightBottom
    } else {
        Direction::LeftBottomToRightTop
    };
    GeneralEncoding {
        xc: c.x,
        yc: c.y,
        w: (p2.x - p1.x).abs(),
        h: (p2.y - p1.y).abs(),
        direction,
        category: s.category,
    }
}

pub fn encode_box(b: &ObjectBox) -> GeneralEncoding {
    GeneralEncoding {
        xc: 0.5 * (b.min.x + b.max.x),
        yc: 0.5 * (b.min.y + b.max.y),
        w: b.width(),
        h: b.height(),
        direction: Direction::ObjectBox,
        category: b.category,
    }
}

/// Result of decoding a [`GeneralEncoding`].
#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Segment(SemLs),
    Box(ObjectBox),
}

pub fn decode_general(g: &GeneralEncoding) -> Result<Decoded> {
    let (hw, hh) = (0.5 * g.w, 0.5 * g.h);
    let (x0, x1) = (g.xc - hw, g.xc + hw);
    let (y0, y1) = (g.yc - hh, g.yc + hh);
    match g.direction {
        Direction::LeftTopToRightBottom => SemLs::new((x0, y0), (x1, y1), g.category).map(Decoded::Segment),
        Direction::LeftBottomToRightTop => SemLs::new((x0, y1), (x1, y0), g.category).map(Decoded::Segment),
        Direction::ObjectBox => ObjectBox::new(Point::new(x0, y0), Point::new(x1, y1), g.category).map(Decoded::Box),
    }
}

/// Hard cap on the number of categories a registry may hold.
pub const MAX_CATEGORIES: usize = 14;

/// Names of the categories that ship with [`CategoryRegistry::default`].
pub const DEFAULT_CATEGORIES: [&str; 4] = ["building", "pole", "curb", "grass"];

/// Bidirectional mapping between category names and indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for CategoryRegistry {
    fn default() -> Self {
        Self::from_names(DEFAULT_CATEGORIES).expect("default categories are valid")
    }
}

impl CategoryRegistry {
    pub fn empty() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut reg = Self::empty();
        for n in names {
            reg.register(n.as_ref())?;
        }
        Ok(reg)
    }

    /// Appends a category and returns its index.
    pub fn register(&mut self, name: &str) -> Result<usize> {
        if name.is_empty() {
            return Err(Error::validation("empty category name"));
        }
        if self.index.contains_key(name) {
            return Err(Error::validation(format!("duplicate category `{name}`")));
        }
        if self.names.len() >= MAX_CATEGORIES {
            return Err(Error::validation(format!(
                "registry is full ({MAX_CATEGORIES} categories)"
            )));
        }
        let idx = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), idx);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownCategory(name.to_owned()))
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
