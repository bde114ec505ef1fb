use ndarray::{Array2, Array3, ArrayViewMut2, Axis};

use super::{GAUSSIAN_MIN_OVERLAP, HEATMAP_EPS};
use crate::error::{Error, Result};
use crate::segment::{decode_general, encode_angmidlen, Decoded, Direction, GeneralEncoding};

/// Dense training targets on the feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMaps {
    /// `K x rows x cols`, Gaussian peaks equal to 1 at object centers.
    pub heatmap: Array3<f64>,
    /// `2 x rows x cols`: sub-cell center offset (x, y) in `[0, 1)`.
    pub offset: Array3<f64>,
    /// `2 x rows x cols`: box width and height in feature-map units.
    pub wh: Array3<f64>,
    /// `1 x rows x cols`: angle divided by 180 degrees.
    pub ang: Array3<f64>,
    /// `1 x rows x cols`: length divided by the feature-map diagonal.
    pub len: Array3<f64>,
    /// `1 x rows x cols`: direction flag, 0 or 1.
    pub direction: Array3<f64>,
    /// `rows x cols`: 1 at center cells.
    pub mask: Array2<f64>,
    /// Number of annotations, collisions included.
    pub count: usize,
    pub stride: usize,
}

impl TargetMaps {
    pub fn num_classes(&self) -> usize {
        self.heatmap.len_of(Axis(0))
    }

    /// `(rows, cols)` of the feature map.
    pub fn feature_dims(&self) -> (usize, usize) {
        (self.mask.nrows(), self.mask.ncols())
    }

    /// Feature-map diagonal, the normalizer of the length target.
    pub fn feature_diagonal(&self) -> f64 {
        let (r, c) = self.feature_dims();
        (r as f64).hypot(c as f64)
    }
}

/// Largest corner displacement keeping box IoU at least `min_overlap`,
/// as the minimum over the three placement cases (shifted, shrunk, grown).
pub fn gaussian_radius(w: f64, h: f64, min_overlap: f64) -> f64 {
    let o = min_overlap;
    let s = w + h;
    let wh = w * h;
    // shifted box: (w - r)(h - r) >= 2o wh / (1 + o)
    let r1 = (s - (s * s - 4.0 * wh * (1.0 - o) / (1.0 + o)).max(0.0).sqrt()) / 2.0;
    // shrunk box: (w - 2r)(h - 2r) >= o wh
    let r2 = (2.0 * s - (4.0 * s * s - 16.0 * wh * (1.0 - o)).max(0.0).sqrt()) / 8.0;
    // grown box: wh >= o (w + 2r)(h + 2r)
    let r3 = (-2.0 * o * s + (4.0 * o * o * s * s + 16.0 * o * (1.0 - o) * wh).max(0.0).sqrt()) / (8.0 * o);
    r1.min(r2).min(r3).max(0.0)
}

/// Standard deviation of the heatmap Gaussian for a box of `w x h`
/// feature-map cells.
pub fn gaussian_sigma(w: f64, h: f64) -> f64 {
    let radius = gaussian_radius(w, h, GAUSSIAN_MIN_OVERLAP).floor();
    ((2.0 * radius + 1.0) / 6.0).max(HEATMAP_EPS)
}

/// Writes `exp(-((x - cx)^2 + (y - cy)^2) / (2 sigma^2))` into `channel`,
/// keeping the per-cell maximum with what is already there.
pub fn draw_gaussian(mut channel: ArrayViewMut2<f64>, cx: usize, cy: usize, sigma: f64) {
    let denom = 2.0 * sigma * sigma;
    for ((y, x), v) in channel.indexed_iter_mut() {
        let dx = x as f64 - cx as f64;
        let dy = y as f64 - cy as f64;
        let g = (-(dx * dx + dy * dy) / denom).exp();
        if g > *v {
            *v = g;
        }
    }
}

/// Builds the dense targets for segment annotations on a `width x height`
/// image with output stride `stride`.
///
/// When two annotations fall into the same cell both count towards `N`; the
/// regression targets of the later one overwrite the earlier.
pub fn make_targets(
    annotations: &[GeneralEncoding],
    num_classes: usize,
    width: usize,
    height: usize,
    stride: usize,
) -> Result<TargetMaps> {
    if stride == 0 || !width.is_multiple_of(stride) || !height.is_multiple_of(stride) {
        return Err(Error::validation(format!(
            "stride {stride} must divide the image size {width}x{height}"
        )));
    }
    let (cols, rows) = (width / stride, height / stride);
    if cols == 0 || rows == 0 || num_classes == 0 {
        return Err(Error::validation("empty feature map"));
    }
    let r = stride as f64;
    let diag = (rows as f64).hypot(cols as f64);

    let mut t = TargetMaps {
        heatmap: Array3::zeros((num_classes, rows, cols)),
        offset: Array3::zeros((2, rows, cols)),
        wh: Array3::zeros((2, rows, cols)),
        ang: Array3::zeros((1, rows, cols)),
        len: Array3::zeros((1, rows, cols)),
        direction: Array3::zeros((1, rows, cols)),
        mask: Array2::zeros((rows, cols)),
        count: annotations.len(),
        stride,
    };

    for g in annotations {
        if g.direction == Direction::ObjectBox {
            return Err(Error::validation("object boxes have no segment targets"));
        }
        if g.category >= num_classes {
            return Err(Error::validation(format!(
                "category {} outside {num_classes} heatmap channels",
                g.category
            )));
        }
        if !(0.0..width as f64).contains(&g.xc) || !(0.0..height as f64).contains(&g.yc) {
            return Err(Error::validation(format!(
                "center ({}, {}) outside the {width}x{height} image",
                g.xc, g.yc
            )));
        }
        let Decoded::Segment(seg) = decode_general(g)? else {
            unreachable!("direction checked above")
        };
        let aml = encode_angmidlen(&seg)?;

        let (fx, fy) = (g.xc / r, g.yc / r);
        let (cx, cy) = (fx.floor() as usize, fy.floor() as usize);
        let (wf, hf) = (g.w / r, g.h / r);

        draw_gaussian(
            t.heatmap.index_axis_mut(Axis(0), g.category),
            cx,
            cy,
            gaussian_sigma(wf, hf),
        );
        t.heatmap[[g.category, cy, cx]] = 1.0;
        t.offset[[0, cy, cx]] = fx - cx as f64;
        t.offset[[1, cy, cx]] = fy - cy as f64;
        t.wh[[0, cy, cx]] = wf;
        t.wh[[1, cy, cx]] = hf;
        t.ang[[0, cy, cx]] = aml.alpha / 180.0;
        t.len[[0, cy, cx]] = aml.len / r / diag;
        t.direction[[0, cy, cx]] = f64::from(g.d_g());
        t.mask[[cy, cx]] = 1.0;
    }
    Ok(t)
}
