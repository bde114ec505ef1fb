//! File formats.
//!
//! Every structured file is JSON Lines: one self-contained JSON object per
//! line, blank lines ignored. Errors carry the 1-based line number.
//!
//! Annotations and detections, one record per image:
//!
//! ```text
//! {"image_id":"000123","width":1242,"height":375,"segments":[
//!   {"x1":10.0,"y1":20.0,"x2":80.5,"y2":22.0,"category":"curb","score":0.9,"track_id":4}]}
//! ```
//!
//! `score` and `track_id` are optional. A segment with `"d_g":2` is an object
//! box with corners `(x1, y1)` and `(x2, y2)`. Floats are written in the
//! shortest form that reads back to the same binary64 value.
//!
//! Other formats, one object per line:
//!
//! - calibration: `{"image_id", "fx", "fy", "cx", "cy", "R": [9 floats, row-major], "t": [3 floats]}`
//! - poses: `{"frame_id", "position": [x, y, z]}`
//! - triplets: `{"left", "pre", "right"}` image ids
//! - candidates: `{"image_id", "x1", "y1", "x2", "y2"}`
//! - transforms: `{"image_id", "m": [6 floats, row-major 2x3]}`
//! - segment pairs: `{"reference": segment, "other": segment, "category_agnostic": bool}`
//!
//! Grayscale images are binary PGM (`P5`) with a maximum value of at most 255.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DetectionSet;
use crate::geometry3d::CameraView;
use crate::refine::{Candidate, GrayImage};
use crate::repeatability::AffineTransform;
use crate::segment::{CategoryRegistry, ObjectBox, Point, SemLs};

/// Rotation orthonormality tolerance when loading calibration.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_g: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    image_id: String,
    width: u32,
    height: u32,
    segments: Vec<SegmentRecord>,
}

/// Labels (or detections) of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<SemLs>,
    pub boxes: Vec<ObjectBox>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            segments: Vec::new(),
            boxes: Vec::new(),
        }
    }

    pub fn label_count(&self) -> usize {
        self.segments.len() + self.boxes.len()
    }
}

/// Contents of an annotation or detection file, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<AnnotatedImage>,
}

impl AnnotationSet {
    pub fn image(&self, image_id: &str) -> Option<&AnnotatedImage> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn segments_by_image(&self) -> DetectionSet<SemLs> {
        self.images
            .iter()
            .map(|i| (i.image_id.clone(), i.segments.clone()))
            .collect()
    }

    pub fn boxes_by_image(&self) -> DetectionSet<ObjectBox> {
        self.images
            .iter()
            .map(|i| (i.image_id.clone(), i.boxes.clone()))
            .collect()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Parses each non-blank line of `path` as a `T`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::validation(e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(path, buf)?;
    Ok(())
}

fn in_bounds(v: f64, hi: u32) -> bool {
    v.is_finite() && (0.0..=hi as f64).contains(&v)
}

fn image_from_record(rec: ImageRecord, registry: &CategoryRegistry) -> Result<AnnotatedImage> {
    if rec.width == 0 || rec.height == 0 {
        return Err(Error::validation("image size must be positive"));
    }
    let mut img = AnnotatedImage::new(rec.image_id, rec.width, rec.height);
    for (k, s) in rec.segments.into_iter().enumerate() {
        let ctx = |e: Error| Error::validation(format!("segment {k}: {e}"));
        for (name, v, hi) in [
            ("x1", s.x1, rec.width),
            ("y1", s.y1, rec.height),
            ("x2", s.x2, rec.width),
            ("y2", s.y2, rec.height),
        ] {
            if !in_bounds(v, hi) {
                return Err(Error::validation(format!(
                    "segment {k}: {name} = {v} outside [0, {hi}]"
                )));
            }
        }
        let category = registry.index_of(&s.category)?;
        if let Some(c) = s.score {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::validation(format!("segment {k}: score {c} outside [0, 1]")));
            }
        }
        let (a, b) = (Point::new(s.x1, s.y1), Point::new(s.x2, s.y2));
        match s.d_g {
            Some(2) => {
                let mut bx = ObjectBox::new(a, b, category).map_err(ctx)?;
                bx.confidence = s.score;
                img.boxes.push(bx);
            }
            Some(0 | 1) | None => {
                let mut seg = SemLs::new(a, b, category).map_err(ctx)?;
                if let Some(c) = s.score {
                    seg = seg.with_confidence(c).map_err(ctx)?;
                }
                if let Some(t) = s.track_id {
                    seg = seg.with_track_id(t);
                }
                img.segments.push(seg);
            }
            Some(d) => {
                return Err(Error::validation(format!(
                    "segment {k}: d_g must be 0, 1 or 2, got {d}"
                )))
            }
        }
    }
    Ok(img)
}

/// Loads annotations or detections. Categories are resolved in `registry`.
pub fn load_annotations(path: &Path, registry: &CategoryRegistry) -> Result<AnnotationSet> {
    let mut images: Vec<AnnotatedImage> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, rec) in read_jsonl::<ImageRecord>(path)? {
        if !seen.insert(rec.image_id.clone()) {
            return Err(parse_err(path, line, format!("duplicate image id `{}`", rec.image_id)));
        }
        images.push(image_from_record(rec, registry).map_err(|e| parse_err(path, line, e))?);
    }
    Ok(AnnotationSet { images })
}

fn segment_record(s: &SemLs, registry: &CategoryRegistry) -> Result<SegmentRecord> {
    let [a, b] = s.endpoints();
    Ok(SegmentRecord {
        x1: a.x,
        y1: a.y,
        x2: b.x,
        y2: b.y,
        category: category_name(registry, s.category)?,
        score: s.confidence,
        track_id: s.track_id,
        d_g: None,
    })
}

fn category_name(registry: &CategoryRegistry, idx: usize) -> Result<String> {
    registry
        .name(idx)
        .map(str::to_owned)
        .ok_or_else(|| Error::UnknownCategory(format!("#{idx}")))
}

/// Serializes one image record per line, segments before boxes.
pub fn annotations_to_string(set: &AnnotationSet, registry: &CategoryRegistry) -> Result<String> {
    let mut out = String::new();
    for img in &set.images {
        let mut segments = img
            .segments
            .iter()
            .map(|s| segment_record(s, registry))
            .collect::<Result<Vec<_>>>()?;
        for b in &img.boxes {
            segments.push(SegmentRecord {
                x1: b.min.x,
                y1: b.min.y,
                x2: b.max.x,
                y2: b.max.y,
                category: category_name(registry, b.category)?,
                score: b.confidence,
                track_id: None,
                d_g: Some(2),
            });
        }
        let rec = ImageRecord {
            image_id: img.image_id.clone(),
            width: img.width,
            height: img.height,
            segments,
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::validation(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_annotations(path: &Path, set: &AnnotationSet, registry: &CategoryRegistry) -> Result<()> {
    fs::write(path, annotations_to_string(set, registry)?)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationRecord {
    image_id: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

/// Nearest rotation to `m` in the Frobenius norm.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Cameras keyed by image id. Rotations are checked to
/// [`CALIBRATION_TOLERANCE`]; those not orthonormal to machine precision are
/// replaced by the nearest rotation.
pub fn load_calibration(path: &Path) -> Result<BTreeMap<String, CameraView>> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_jsonl::<CalibrationRecord>(path)? {
        let r = Matrix3::from_row_slice(&rec.r);
        let t = Vector3::from(rec.t);
        let view = CameraView::with_tolerance(rec.fx, rec.fy, rec.cx, rec.cy, r, t, CALIBRATION_TOLERANCE)
            .and_then(|v| match CameraView::new(rec.fx, rec.fy, rec.cx, rec.cy, r, t) {
                Ok(_) => Ok(v),
                Err(_) => CameraView::new(rec.fx, rec.fy, rec.cx, rec.cy, orthonormalize(&r), t),
            })
            .map_err(|e| parse_err(path, line, e))?;
        if out.insert(rec.image_id.clone(), view).is_some() {
            return Err(parse_err(path, line, format!("duplicate image id `{}`", rec.image_id)));
        }
    }
    Ok(out)
}

pub fn save_calibration(path: &Path, views: &BTreeMap<String, CameraView>) -> Result<()> {
    let recs: Vec<CalibrationRecord> = views
        .iter()
        .map(|(id, v)| {
            let r = v.rotation();
            CalibrationRecord {
                image_id: id.clone(),
                fx: v.fx,
                fy: v.fy,
                cx: v.cx,
                cy: v.cy,
                r: std::array::from_fn(|i| r[(i / 3, i % 3)]),
                t: (*v.translation()).into(),
            }
        })
        .collect();
    write_jsonl(path, &recs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub frame_id: String,
    pub position: [f64; 3],
}

pub fn load_poses(path: &Path) -> Result<BTreeMap<String, [f64; 3]>> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_jsonl::<PoseRecord>(path)? {
        if !rec.position.iter().all(|v| v.is_finite()) {
            return Err(parse_err(path, line, "position must be finite"));
        }
        if out.insert(rec.frame_id.clone(), rec.position).is_some() {
            return Err(parse_err(path, line, format!("duplicate frame id `{}`", rec.frame_id)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletRecord {
    pub left: String,
    pub pre: String,
    pub right: String,
}

pub fn load_triplets(path: &Path) -> Result<Vec<TripletRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRecord {
    image_id: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Candidate segments keyed by image id.
pub fn load_candidates(path: &Path) -> Result<BTreeMap<String, Vec<Candidate>>> {
    let mut out: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for (line, r) in read_jsonl::<CandidateRecord>(path)? {
        let (a, b) = (Point::new(r.x1, r.y1), Point::new(r.x2, r.y2));
        if !a.is_finite() || !b.is_finite() || a == b {
            return Err(parse_err(path, line, "candidate must have finite, distinct endpoints"));
        }
        out.entry(r.image_id).or_default().push(Candidate::new(a, b));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRecord {
    image_id: String,
    m: [f64; 6],
}

pub fn load_transforms(path: &Path) -> Result<BTreeMap<String, AffineTransform>> {
    let mut out = BTreeMap::new();
    for (line, r) in read_jsonl::<TransformRecord>(path)? {
        let t = AffineTransform::from_row_major(r.m).map_err(|e| parse_err(path, line, e))?;
        if out.insert(r.image_id.clone(), t).is_some() {
            return Err(parse_err(path, line, format!("duplicate image id `{}`", r.image_id)));
        }
    }
    Ok(out)
}

pub fn save_transforms(path: &Path, transforms: &BTreeMap<String, AffineTransform>) -> Result<()> {
    let recs: Vec<TransformRecord> = transforms
        .iter()
        .map(|(id, t)| TransformRecord {
            image_id: id.clone(),
            m: t.to_row_major(),
        })
        .collect();
    write_jsonl(path, &recs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub reference: SegmentRecord,
    pub other: SegmentRecord,
    #[serde(default)]
    pub category_agnostic: bool,
}

/// Segment pairs for ACL scoring, with categories resolved.
pub fn load_pairs(path: &Path, registry: &CategoryRegistry) -> Result<Vec<(SemLs, SemLs, bool)>> {
    let to_seg = |s: &SegmentRecord| -> Result<SemLs> {
        SemLs::from_coords(s.x1, s.y1, s.x2, s.y2, registry.index_of(&s.category)?)
    };
    read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(|(line, p)| {
            let a = to_seg(&p.reference).map_err(|e| parse_err(path, line, e))?;
            let b = to_seg(&p.other).map_err(|e| parse_err(path, line, e))?;
            Ok((a, b, p.category_agnostic))
        })
        .collect()
}

/// Reads a binary (`P5`) PGM with 8-bit samples.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| parse_err(path, 1, msg);
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("PGM header is not ASCII"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (expected P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number in PGM header"));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM (maxval 1..=255) is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated PGM header"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad(&format!("expected {} raster bytes, found {}", w * h, data.len())));
    }
    GrayImage::new(w, h, data.to_vec())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(img.pixels())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    /// `(category name, label count)` in registry order.
    pub per_category: Vec<(String, usize)>,
    pub total: usize,
    pub images: usize,
    pub labels_per_image: f64,
}

pub fn dataset_stats(set: &AnnotationSet, registry: &CategoryRegistry) -> Result<DatasetStats> {
    if set.images.is_empty() {
        return Err(Error::Empty("annotation set has no images".into()));
    }
    let mut counts = vec![0usize; registry.len()];
    for img in &set.images {
        let cats = img
            .segments
            .iter()
            .map(|s| s.category)
            .chain(img.boxes.iter().map(|b| b.category));
        for c in cats {
            *counts
                .get_mut(c)
                .ok_or_else(|| Error::UnknownCategory(format!("#{c}")))? += 1;
        }
    }
    let total = counts.iter().sum();
    Ok(DatasetStats {
        per_category: registry.names().iter().cloned().zip(counts).collect(),
        total,
        images: set.images.len(),
        labels_per_image: total as f64 / set.images.len() as f64,
    })
}

/// Writes rows as CSV with a header.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::validation(format!("{other:?}")),
    }
}
