use ndarray::{Array2, Array3, Axis, Zip};

use super::{DirectionMode, Encoding, TargetMaps, FOCAL_DELTA, FOCAL_GAMMA, HEATMAP_EPS};
use crate::error::{Error, Result};

fn check_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

fn check_spatial(what: &str, a: &Array3<f64>, mask: &Array2<f64>) -> Result<()> {
    check_shape(what, &a.shape()[1..], mask.shape())
}

fn normalizer(n: usize) -> f64 {
    n.max(1) as f64
}

/// Penalty-reduced pixel-wise focal loss on the center heatmap.
///
/// Positive cells (target exactly 1) contribute `-(1-p)^g log p`, all others
/// `-(1-m)^d p^g log(1-p)`; the sum is divided by `max(N, 1)`. Predictions
/// are clamped to `[EPS, 1-EPS]`.
pub fn focal_loss(pred: &Array3<f64>, targets: &TargetMaps) -> Result<f64> {
    focal_loss_grad(pred, targets).map(|(l, _)| l)
}

/// [`focal_loss`] together with its gradient with respect to `pred`.
///
/// The gradient is zero where the clamp is active.
pub fn focal_loss_grad(pred: &Array3<f64>, targets: &TargetMaps) -> Result<(f64, Array3<f64>)> {
    check_shape("heatmap", pred.shape(), targets.heatmap.shape())?;
    let n = normalizer(targets.count);
    let mut grad = Array3::zeros(pred.raw_dim());
    let mut loss = 0.0;
    Zip::from(&mut grad)
        .and(pred)
        .and(&targets.heatmap)
        .for_each(|g, &p_raw, &m| {
            let p = p_raw.clamp(HEATMAP_EPS, 1.0 - HEATMAP_EPS);
            let active = p == p_raw;
            // focusing factors use the unclamped value so a perfect prediction costs exactly 0
            let exact = p_raw.clamp(0.0, 1.0);
            if m == 1.0 {
                let q = 1.0 - p;
                let f = (1.0 - exact).powf(FOCAL_GAMMA);
                if f > 0.0 {
                    loss -= f * p.ln();
                }
                if active {
                    *g = (FOCAL_GAMMA * q.powf(FOCAL_GAMMA - 1.0) * p.ln() - q.powf(FOCAL_GAMMA) / p) / n;
                }
            } else {
                let w = (1.0 - m).powf(FOCAL_DELTA);
                let q = 1.0 - p;
                let f = w * exact.powf(FOCAL_GAMMA);
                if f > 0.0 {
                    loss -= f * q.ln();
                }
                if active {
                    *g = -w * (FOCAL_GAMMA * p.powf(FOCAL_GAMMA - 1.0) * q.ln() - p.powf(FOCAL_GAMMA) / q) / n;
                }
            }
        });
    Ok((loss / n, grad))
}

/// Sum over masked cells and all channels of `|pred - target|`, divided by
/// `max(n, 1)`.
pub fn masked_l1(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<f64>, n: usize) -> Result<f64> {
    check_shape("regression head", pred.shape(), target.shape())?;
    check_spatial("regression head", pred, mask)?;
    let mut sum = 0.0;
    for (p, t) in pred.outer_iter().zip(target.outer_iter()) {
        Zip::from(&p).and(&t).and(mask).for_each(|&p, &t, &m| {
            if m != 0.0 {
                sum += m * (p - t).abs();
            }
        });
    }
    Ok(sum / normalizer(n))
}

/// Subgradient of [`masked_l1`]: `sign(pred - target) * mask / max(n, 1)`.
pub fn masked_l1_grad(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<f64>, n: usize) -> Result<Array3<f64>> {
    check_shape("regression head", pred.shape(), target.shape())?;
    check_spatial("regression head", pred, mask)?;
    let n = normalizer(n);
    let mut grad = Array3::zeros(pred.raw_dim());
    for ((mut g, p), t) in grad.outer_iter_mut().zip(pred.outer_iter()).zip(target.outer_iter()) {
        Zip::from(&mut g).and(&p).and(&t).and(mask).for_each(|g, &p, &t, &m| {
            let d = p - t;
            *g = if d == 0.0 { 0.0 } else { m * d.signum() / n };
        });
    }
    Ok(grad)
}

fn direction_targets(target: &Array3<f64>, mask: &Array2<f64>) -> Result<Array2<usize>> {
    check_shape("direction target", target.shape(), &[1, mask.nrows(), mask.ncols()])?;
    let t = target.index_axis(Axis(0), 0);
    let mut out = Array2::zeros(t.raw_dim());
    for ((idx, &v), &m) in t.indexed_iter().zip(mask.iter()) {
        if m == 0.0 {
            continue;
        }
        out[idx] = match v {
            0.0 => 0,
            1.0 => 1,
            other => {
                return Err(Error::validation(format!("direction target {other} not in {{0, 1}}")));
            }
        };
    }
    Ok(out)
}

/// Masked two-class cross-entropy on the direction logits.
///
/// The softmax normalizer runs over the predicted logits.
pub fn direction_ce(logits: &Array3<f64>, target: &Array3<f64>, mask: &Array2<f64>, n: usize) -> Result<f64> {
    direction_ce_grad(logits, target, mask, n).map(|(l, _)| l)
}

pub fn direction_ce_grad(
    logits: &Array3<f64>,
    target: &Array3<f64>,
    mask: &Array2<f64>,
    n: usize,
) -> Result<(f64, Array3<f64>)> {
    check_shape("direction logits", logits.shape(), &[2, mask.nrows(), mask.ncols()])?;
    let labels = direction_targets(target, mask)?;
    let n = normalizer(n);
    let mut grad = Array3::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((y, x), &m) in mask.indexed_iter() {
        if m == 0.0 {
            continue;
        }
        let (a, b) = (logits[[0, y, x]], logits[[1, y, x]]);
        let hi = a.max(b);
        let lse = hi + ((a - hi).exp() + (b - hi).exp()).ln();
        let d = labels[[y, x]];
        let chosen = if d == 0 { a } else { b };
        loss -= m * (chosen - lse);
        for (c, z) in [a, b].into_iter().enumerate() {
            let soft = (z - lse).exp();
            let onehot = if c == d { 1.0 } else { 0.0 };
            grad[[c, y, x]] = m * (soft - onehot) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Prediction arrays of the detector heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    /// `K x rows x cols`, values in `[0, 1]`.
    pub heatmap: Array3<f64>,
    /// `2 x rows x cols`.
    pub offset: Array3<f64>,
    pub wh: Option<Array3<f64>>,
    /// One channel (regression) or two logits (classification).
    pub direction: Option<Array3<f64>>,
    pub ang: Option<Array3<f64>>,
    pub len: Option<Array3<f64>>,
}

/// Logit magnitude used by [`Heads::ideal`] for the direction classes.
const IDEAL_LOGIT: f64 = 40.0;

impl Heads {
    /// Predictions with zero loss against `targets`: a binary peak map at
    /// the center cells and exact regression values.
    pub fn ideal(targets: &TargetMaps, encoding: Encoding, mode: DirectionMode) -> Self {
        let (wh, direction, ang, len) = match encoding {
            Encoding::AngMidLen => (None, None, Some(targets.ang.clone()), Some(targets.len.clone())),
            Encoding::LineAsObj => {
                let d = match mode {
                    DirectionMode::Regression => targets.direction.clone(),
                    DirectionMode::Classification => {
                        let t = targets.direction.index_axis(Axis(0), 0);
                        let mut logits = Array3::zeros((2, t.nrows(), t.ncols()));
                        for ((y, x), &v) in t.indexed_iter() {
                            let s = if v == 1.0 { -IDEAL_LOGIT } else { IDEAL_LOGIT };
                            logits[[0, y, x]] = s;
                            logits[[1, y, x]] = -s;
                        }
                        logits
                    }
                };
                (Some(targets.wh.clone()), Some(d), None, None)
            }
        };
        Self {
            heatmap: targets.heatmap.mapv(|m| if m == 1.0 { 1.0 } else { 0.0 }),
            offset: targets.offset.clone(),
            wh,
            direction,
            ang,
            len,
        }
    }
}

/// Relative weights of the loss terms. The heatmap term has weight 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub offset: f64,
    pub wh: f64,
    pub direction: f64,
    pub ang: f64,
    pub len: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            offset: 1.0,
            wh: 0.1,
            direction: 1.0,
            ang: 1.0,
            len: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.offset, self.wh, self.direction, self.ang, self.len];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Individual loss terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub heatmap: f64,
    pub offset: f64,
    pub wh: Option<f64>,
    pub direction: Option<f64>,
    pub ang: Option<f64>,
    pub len: Option<f64>,
    pub total: f64,
}

fn require<'a>(head: &'a Option<Array3<f64>>, name: &str) -> Result<&'a Array3<f64>> {
    head.as_ref()
        .ok_or_else(|| Error::validation(format!("missing `{name}` head for the selected encoding")))
}

/// Total detector loss for the selected encoding.
///
/// AngMidLen: `hm + w_off off + w_ang ang + w_len len`.
/// LineAsObj: `hm + w_off off + w_wh wh + w_d d`.
pub fn total_loss(
    heads: &Heads,
    targets: &TargetMaps,
    weights: &LossWeights,
    encoding: Encoding,
    mode: DirectionMode,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let n = targets.count;
    let mask = &targets.mask;
    let mut b = LossBreakdown {
        heatmap: focal_loss(&heads.heatmap, targets)?,
        offset: masked_l1(&heads.offset, &targets.offset, mask, n)?,
        ..Default::default()
    };
    b.total = b.heatmap + weights.offset * b.offset;
    match encoding {
        Encoding::AngMidLen => {
            let ang = masked_l1(require(&heads.ang, "ang")?, &targets.ang, mask, n)?;
            let len = masked_l1(require(&heads.len, "len")?, &targets.len, mask, n)?;
            b.total += weights.ang * ang;
            b.total += weights.len * len;
            b.ang = Some(ang);
            b.len = Some(len);
        }
        Encoding::LineAsObj => {
            let wh = masked_l1(require(&heads.wh, "wh")?, &targets.wh, mask, n)?;
            let dir = require(&heads.direction, "direction")?;
            let d = match mode {
                DirectionMode::Regression => masked_l1(dir, &targets.direction, mask, n)?,
                DirectionMode::Classification => direction_ce(dir, &targets.direction, mask, n)?,
            };
            b.total += weights.wh * wh;
            b.total += weights.direction * d;
            b.wh = Some(wh);
            b.direction = Some(d);
        }
    }
    Ok(b)
}
