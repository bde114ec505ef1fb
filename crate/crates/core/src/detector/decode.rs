use std::cmp::Ordering;

use ndarray::Axis;

use super::{DirectionMode, Encoding, Heads, DEFAULT_STRIDE};
use crate::error::{Error, Result};
use crate::segment::{decode_angmidlen, decode_general, fold_angle, AngMidLen, Decoded, GeneralEncoding, Point, SemLs};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeParams {
    pub conf_threshold: f64,
    pub top_k: usize,
    pub stride: usize,
    pub encoding: Encoding,
    pub direction_mode: DirectionMode,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            conf_threshold: 0.5,
            top_k: 100,
            stride: DEFAULT_STRIDE,
            encoding: Encoding::LineAsObj,
            direction_mode: DirectionMode::Regression,
        }
    }
}

struct Peak {
    score: f64,
    k: usize,
    y: usize,
    x: usize,
}

/// Cells strictly greater than all of their (in-bounds) 8 neighbours.
fn local_maxima(heads: &Heads) -> Vec<Peak> {
    let mut peaks = Vec::new();
    for (k, ch) in heads.heatmap.axis_iter(Axis(0)).enumerate() {
        let (rows, cols) = ch.dim();
        for y in 0..rows {
            for x in 0..cols {
                let v = ch[[y, x]];
                let is_max = (y.saturating_sub(1)..=(y + 1).min(rows - 1)).all(|ny| {
                    (x.saturating_sub(1)..=(x + 1).min(cols - 1)).all(|nx| (ny == y && nx == x) || ch[[ny, nx]] < v)
                });
                if is_max {
                    peaks.push(Peak { score: v, k, y, x });
                }
            }
        }
    }
    peaks
}

/// Turns head predictions into scored segments.
///
/// Candidates are strict 3x3 local maxima of each heatmap channel; the best
/// `top_k` are kept and those scoring at least `conf_threshold` decoded. The
/// channel index becomes the category.
pub fn decode_detections(heads: &Heads, params: &DecodeParams) -> Result<Vec<SemLs>> {
    let (k, rows, cols) = heads.heatmap.dim();
    if k == 0 || rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let spatial = [rows, cols];
    let check = |name: &str, a: &ndarray::Array3<f64>, ch: &[usize]| -> Result<()> {
        if !ch.contains(&a.len_of(Axis(0))) || a.shape()[1..] != spatial {
            return Err(Error::shape(format!("{name} head has shape {:?}", a.shape())));
        }
        Ok(())
    };
    check("offset", &heads.offset, &[2])?;
    let r = params.stride as f64;

    let mut peaks = local_maxima(heads);
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.k.cmp(&b.k))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    peaks.truncate(params.top_k);

    let mut out = Vec::new();
    for p in peaks.into_iter().take_while(|p| p.score >= params.conf_threshold) {
        let (y, x) = (p.y, p.x);
        let center = Point::new(
            (x as f64 + heads.offset[[0, y, x]]) * r,
            (y as f64 + heads.offset[[1, y, x]]) * r,
        );
        let seg = match params.encoding {
            Encoding::LineAsObj => {
                let wh = heads
                    .wh
                    .as_ref()
                    .ok_or_else(|| Error::validation("missing `wh` head"))?;
                let dir = heads
                    .direction
                    .as_ref()
                    .ok_or_else(|| Error::validation("missing `direction` head"))?;
                check("wh", wh, &[2])?;
                let d_g = match params.direction_mode {
                    DirectionMode::Regression => {
                        check("direction", dir, &[1])?;
                        u8::from(dir[[0, y, x]] >= 0.5)
                    }
                    DirectionMode::Classification => {
                        check("direction", dir, &[2])?;
                        u8::from(dir[[1, y, x]].total_cmp(&dir[[0, y, x]]) == Ordering::Greater)
                    }
                };
                let g = GeneralEncoding::from_raw(
                    center.x,
                    center.y,
                    wh[[0, y, x]].max(0.0) * r,
                    wh[[1, y, x]].max(0.0) * r,
                    d_g,
                    p.k,
                )?;
                match decode_general(&g) {
                    Ok(Decoded::Segment(s)) => s,
                    _ => continue,
                }
            }
            Encoding::AngMidLen => {
                let ang = heads
                    .ang
                    .as_ref()
                    .ok_or_else(|| Error::validation("missing `ang` head"))?;
                let len = heads
                    .len
                    .as_ref()
                    .ok_or_else(|| Error::validation("missing `len` head"))?;
                check("ang", ang, &[1])?;
                check("len", len, &[1])?;
                let diag = (rows as f64).hypot(cols as f64);
                let length = len[[0, y, x]] * diag * r;
                let Ok(a) = AngMidLen::new(fold_angle(ang[[0, y, x]] * 180.0), center, length) else {
                    continue;
                };
                let (p1, p2) = decode_angmidlen(&a)?;
                SemLs::new(p1, p2, p.k)?
            }
        };
        out.push(seg.with_confidence(p.score.clamp(0.0, 1.0))?);
    }
    Ok(out)
}
