//! Anisotropic atrous convolution and the Bi-Atrous Module.
//!
//! Arrays are `(channels, rows, cols)`; kernels are
//! `(out_channels, in_channels, ky, kx)`. Convolution here means
//! cross-correlation with zero padding and unit stride, as in the usual deep
//! learning frameworks.

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AtrousConfig {
    /// Kernel extent `(ky, kx)`.
    pub kernel: (usize, usize),
    /// Dilation `(rate_y, rate_x)`, both at least 1.
    pub rate: (usize, usize),
    /// Zero padding `(pad_y, pad_x)`.
    pub pad: (usize, usize),
}

impl AtrousConfig {
    pub fn new(kernel: (usize, usize), rate: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::validation("kernel extent must be positive"));
        }
        if rate.0 == 0 || rate.1 == 0 {
            return Err(Error::validation("dilation rate must be at least 1"));
        }
        Ok(Self { kernel, rate, pad })
    }

    /// Config whose output has the input's spatial size. Needs odd extents.
    pub fn same_size(kernel: (usize, usize), rate: (usize, usize)) -> Result<Self> {
        if kernel.0.is_multiple_of(2) || kernel.1.is_multiple_of(2) {
            return Err(Error::validation("same-size padding needs odd kernel extents"));
        }
        let pad = ((kernel.0 - 1) * rate.0 / 2, (kernel.1 - 1) * rate.1 / 2);
        Self::new(kernel, rate, pad)
    }

    /// Receptive extent `(k - 1) * rate + 1` along each axis.
    pub fn effective_extent(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.rate.0 + 1,
            (self.kernel.1 - 1) * self.rate.1 + 1,
        )
    }

    pub fn output_dims(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (ey, ex) = self.effective_extent();
        let h = (rows + 2 * self.pad.0) as i64 - ey as i64 + 1;
        let w = (cols + 2 * self.pad.1) as i64 - ex as i64 + 1;
        if h <= 0 || w <= 0 {
            return Err(Error::shape(format!(
                "atrous output would be {h}x{w} for a {rows}x{cols} input"
            )));
        }
        Ok((h as usize, w as usize))
    }
}

/// Output columns `ox` for which `ox + off` lands inside `0..len`.
fn valid_range(off: i64, len: usize, out_len: usize) -> (usize, usize) {
    let lo = (-off).clamp(0, out_len as i64) as usize;
    let hi = (len as i64 - off).clamp(0, out_len as i64) as usize;
    (lo, hi.max(lo))
}

/// Dilated cross-correlation; taps sit at `(dy * rate_y, dx * rate_x)`.
pub fn atrous_conv2d(input: &Array3<f64>, kernels: &Array4<f64>, cfg: &AtrousConfig) -> Result<Array3<f64>> {
    let (c_in, rows, cols) = input.dim();
    let (c_out, k_in, ky, kx) = kernels.dim();
    if k_in != c_in {
        return Err(Error::shape(format!(
            "kernels expect {k_in} input channels, input has {c_in}"
        )));
    }
    if (ky, kx) != cfg.kernel {
        return Err(Error::shape(format!(
            "kernel extent {ky}x{kx} does not match config {:?}",
            cfg.kernel
        )));
    }
    let (oh, ow) = cfg.output_dims(rows, cols)?;
    let input = input.as_standard_layout();

    let planes: Vec<Array2<f64>> = (0..c_out)
        .into_par_iter()
        .map(|co| {
            let mut out = Array2::<f64>::zeros((oh, ow));
            for ci in 0..c_in {
                let plane = input.index_axis(Axis(0), ci);
                for dy in 0..ky {
                    let off_y = (dy * cfg.rate.0) as i64 - cfg.pad.0 as i64;
                    let (y0, y1) = valid_range(off_y, rows, oh);
                    for dx in 0..kx {
                        let w = kernels[[co, ci, dy, dx]];
                        if w == 0.0 {
                            continue;
                        }
                        let off_x = (dx * cfg.rate.1) as i64 - cfg.pad.1 as i64;
                        let (x0, x1) = valid_range(off_x, cols, ow);
                        for oy in y0..y1 {
                            let iy = (oy as i64 + off_y) as usize;
                            let src = plane.slice(s![iy, (x0 as i64 + off_x) as usize..(x1 as i64 + off_x) as usize]);
                            let mut dst = out.slice_mut(s![oy, x0..x1]);
                            dst.scaled_add(w, &src);
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut out = Array3::zeros((c_out, oh, ow));
    for (co, p) in planes.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), co).assign(&p);
    }
    Ok(out)
}

/// Per-channel affine normalization `y = scale * x + shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ChannelNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    /// Folds batch-norm statistics `gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn from_stats(mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Self> {
        let n = mean.len();
        if var.len() != n || gamma.len() != n || beta.len() != n {
            return Err(Error::shape("normalization statistics differ in length"));
        }
        if eps < 0.0 || var.iter().any(|&v| v + eps <= 0.0) {
            return Err(Error::validation("variance plus eps must be positive"));
        }
        let scale: Vec<f64> = (0..n).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
        let shift = (0..n).map(|c| beta[c] - mean[c] * scale[c]).collect();
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, x: &mut Array3<f64>) -> Result<()> {
        if x.len_of(Axis(0)) != self.channels() || self.shift.len() != self.channels() {
            return Err(Error::shape(format!(
                "normalization has {} channels, array has {}",
                self.channels(),
                x.len_of(Axis(0))
            )));
        }
        for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
            let (a, b) = (self.scale[c], self.shift[c]);
            plane.mapv_inplace(|v| a * v + b);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BamVariant {
    /// 5x1 and 1x5 kernels at rate 2.
    Bam51,
    /// 3x3 kernels at rates (3, 1) and (1, 3).
    Bam33,
}

impl BamVariant {
    /// Configs of the vertical, horizontal and square branches.
    pub fn configs(self) -> [AtrousConfig; 3] {
        let square = AtrousConfig {
            kernel: (3, 3),
            rate: (1, 1),
            pad: (1, 1),
        };
        match self {
            BamVariant::Bam51 => [
                AtrousConfig {
                    kernel: (5, 1),
                    rate: (2, 1),
                    pad: (4, 0),
                },
                AtrousConfig {
                    kernel: (1, 5),
                    rate: (1, 2),
                    pad: (0, 4),
                },
                square,
            ],
            BamVariant::Bam33 => [
                AtrousConfig {
                    kernel: (3, 3),
                    rate: (3, 1),
                    pad: (3, 1),
                },
                AtrousConfig {
                    kernel: (3, 3),
                    rate: (1, 3),
                    pad: (1, 3),
                },
                square,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BamBranch {
    pub kernels: Array4<f64>,
    pub norm: ChannelNorm,
}

/// Weights of the three parallel branches.
#[derive(Clone, Debug, PartialEq)]
pub struct BamParams {
    pub vertical: BamBranch,
    pub horizontal: BamBranch,
    pub square: BamBranch,
}

impl BamParams {
    pub fn zeros(channels: usize, variant: BamVariant) -> Self {
        let [v, h, q] = variant.configs().map(|cfg| BamBranch {
            kernels: Array4::zeros((channels, channels, cfg.kernel.0, cfg.kernel.1)),
            norm: ChannelNorm::identity(channels),
        });
        Self {
            vertical: v,
            horizontal: h,
            square: q,
        }
    }

    /// Kernel taps uniform in `±1/sqrt(fan_in)`, random positive scales and small shifts.
    pub fn random<R: Rng>(channels: usize, variant: BamVariant, rng: &mut R) -> Self {
        let mut p = Self::zeros(channels, variant);
        for b in p.branches_mut() {
            let (_, c_in, ky, kx) = b.kernels.dim();
            let bound = 1.0 / ((c_in * ky * kx) as f64).sqrt();
            b.kernels.mapv_inplace(|_| rng.random_range(-bound..bound));
            for c in 0..channels {
                b.norm.scale[c] = rng.random_range(0.5..1.5);
                b.norm.shift[c] = rng.random_range(-0.1..0.1);
            }
        }
        p
    }

    fn branches_mut(&mut self) -> [&mut BamBranch; 3] {
        [&mut self.vertical, &mut self.horizontal, &mut self.square]
    }

    pub fn branches(&self) -> [&BamBranch; 3] {
        [&self.vertical, &self.horizontal, &self.square]
    }
}

/// One branch: convolution, normalization, ReLU.
pub fn bam_branch(input: &Array3<f64>, branch: &BamBranch, cfg: &AtrousConfig) -> Result<Array3<f64>> {
    let mut y = atrous_conv2d(input, &branch.kernels, cfg)?;
    branch.norm.apply(&mut y)?;
    y.mapv_inplace(|v| v.max(0.0));
    Ok(y)
}

/// Sum of the three branch outputs; the spatial size is preserved.
pub fn bam_forward(input: &Array3<f64>, params: &BamParams, variant: BamVariant) -> Result<Array3<f64>> {
    let (_, rows, cols) = input.dim();
    let mut sum: Option<Array3<f64>> = None;
    for (branch, cfg) in params.branches().into_iter().zip(variant.configs()) {
        let y = bam_branch(input, branch, &cfg)?;
        if y.shape()[1..] != [rows, cols] {
            return Err(Error::shape(format!(
                "branch {:?} produced {:?} from a {rows}x{cols} input",
                cfg,
                y.shape()
            )));
        }
        sum = Some(match sum {
            None => y,
            Some(s) if s.dim() == y.dim() => s + y,
            Some(s) => {
                return Err(Error::shape(format!(
                    "branch shapes {:?} and {:?} differ",
                    s.shape(),
                    y.shape()
                )))
            }
        });
    }
    Ok(sum.expect("three branches"))
}
