//! Batched im2col convolution kernels over flat NCHW buffers.
//!
//! Both directions share one [`Geometry`]: a strided cross-correlation that
//! maps an `h x w` plane onto an `oh x ow` plane. `conv2d` runs it forward;
//! `conv2d_transpose` runs its adjoint, so the two are exact transposes of
//! each other as linear maps.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/cols appended to a transposed convolution's output. Must be
    /// smaller than `stride`. Ignored by the forward convolution.
    pub output_padding: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvParams {
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }
}

/// Cross-correlation geometry for one plane of `channels` feature maps.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn conv_out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub(crate) fn conv_transpose_out_extent(size: usize, k: usize, p: ConvParams) -> Option<usize> {
    if size == 0 || p.stride == 0 {
        return None;
    }
    let full = (size - 1) * p.stride + k + p.output_padding;
    full.checked_sub(2 * p.padding).filter(|&e| e >= 1)
}

/// Unfold an `n x channels x h x w` batch into a `(channels*k*k) x (n*oh*ow)` matrix.
fn im2col(input: &[f64], n: usize, g: &Geometry) -> Vec<f64> {
    let plane = g.out_plane();
    let cols = n * plane;
    let mut col = vec![0.0; g.col_rows() * cols];
    for c in 0..g.channels {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let dst_row = &mut col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let src = &input[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[b * plane..(b + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back onto an `n x channels x h x w` batch.
fn col2im(col: &[f64], n: usize, g: &Geometry) -> Vec<f64> {
    let plane = g.out_plane();
    let cols = n * plane;
    let mut out = vec![0.0; n * g.channels * g.h * g.w];
    for c in 0..g.channels {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let src_row = &col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let dst = &mut out[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[b * plane..(b + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for (ox, s) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                            let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `n x c x p` (NCHW with flattened plane) into `c x (n*p)`.
fn batch_to_channel_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * p + b * p..][..p].copy_from_slice(&x[(b * c + ch) * p..][..p]);
        }
    }
    out
}

fn channel_major_to_batch(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * p..][..p].copy_from_slice(&x[ch * n * p + b * p..][..p]);
        }
    }
    out
}

/// Validated shapes for a forward convolution: input `[n, c, h, w]`, kernel `[o, c, k, k]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dPlan {
    pub n: usize,
    pub out_channels: usize,
    pub geom: Geometry,
}

impl Conv2dPlan {
    pub fn new(input: &[usize], kernel: &[usize], p: ConvParams) -> Result<Self> {
        let [n, c, h, w] = rank4(input, "conv2d input")?;
        let [o, i, kh, kw] = rank4(kernel, "conv2d kernel")?;
        if kh != kw || kh == 0 {
            return Err(Error::Dimension(format!(
                "kernel must be square and non-empty, got {kh}x{kw}"
            )));
        }
        if i != c {
            return Err(Error::Dimension(format!(
                "kernel expects {i} input channels, input has {c}"
            )));
        }
        let oh = conv_out_extent(h, kh, p.stride, p.padding);
        let ow = conv_out_extent(w, kw, p.stride, p.padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Dimension(format!(
                "conv2d output extent < 1 for {h}x{w} input, kernel {kh}, stride {}, padding {}",
                p.stride, p.padding
            )));
        };
        Ok(Conv2dPlan {
            n,
            out_channels: o,
            geom: Geometry {
                channels: c,
                h,
                w,
                k: kh,
                stride: p.stride,
                pad: p.padding,
                oh,
                ow,
            },
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.out_channels, self.geom.oh, self.geom.ow]
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let col = im2col(input, self.n, g);
        let cols = self.n * g.out_plane();
        let mut tmp = vec![0.0; self.out_channels * cols];
        gemm(
            Mat::new(kernel, self.out_channels, g.col_rows()),
            Mat::new(&col, g.col_rows(), cols),
            &mut tmp,
            0.0,
        );
        channel_major_to_batch(&tmp, self.n, self.out_channels, g.out_plane())
    }

    /// Returns `(d input, d kernel)`; the input gradient is skipped unless `need_input`.
    pub fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        need_input: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>) {
        let g = &self.geom;
        let cols = self.n * g.out_plane();
        let gtmp = batch_to_channel_major(grad_out, self.n, self.out_channels, g.out_plane());
        let col = im2col(input, self.n, g);
        let mut gkernel = vec![0.0; self.out_channels * g.col_rows()];
        gemm(
            Mat::new(&gtmp, self.out_channels, cols),
            Mat::t(&col, g.col_rows(), cols),
            &mut gkernel,
            0.0,
        );
        if !need_input {
            return (None, gkernel);
        }
        let mut gcol = vec![0.0; g.col_rows() * cols];
        gemm(
            Mat::t(kernel, self.out_channels, g.col_rows()),
            Mat::new(&gtmp, self.out_channels, cols),
            &mut gcol,
            0.0,
        );
        (Some(col2im(&gcol, self.n, g)), gkernel)
    }
}

/// Validated shapes for a transposed convolution: input `[n, c_in, h, w]`,
/// kernel `[c_in, c_out, k, k]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvTransposePlan {
    pub n: usize,
    pub in_channels: usize,
    /// Geometry of the forward convolution this operator is the adjoint of:
    /// it maps the (larger) output plane back onto the input plane.
    pub geom: Geometry,
}

impl ConvTransposePlan {
    pub fn new(input: &[usize], kernel: &[usize], p: ConvParams) -> Result<Self> {
        let [n, c, h, w] = rank4(input, "conv2d_transpose input")?;
        let [i, o, kh, kw] = rank4(kernel, "conv2d_transpose kernel")?;
        if kh != kw || kh == 0 {
            return Err(Error::Dimension(format!(
                "kernel must be square and non-empty, got {kh}x{kw}"
            )));
        }
        if i != c {
            return Err(Error::Dimension(format!(
                "kernel expects {i} input channels, input has {c}"
            )));
        }
        if p.stride == 0 || p.output_padding >= p.stride {
            return Err(Error::Dimension(format!(
                "output_padding {} must be smaller than stride {}",
                p.output_padding, p.stride
            )));
        }
        let oh = conv_transpose_out_extent(h, kh, p);
        let ow = conv_transpose_out_extent(w, kw, p);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Dimension(format!(
                "conv2d_transpose output extent < 1 for {h}x{w} input, kernel {kh}, stride {}, padding {}",
                p.stride, p.padding
            )));
        };
        Ok(ConvTransposePlan {
            n,
            in_channels: c,
            geom: Geometry {
                channels: o,
                h: oh,
                w: ow,
                k: kh,
                stride: p.stride,
                pad: p.padding,
                oh: h,
                ow: w,
            },
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.geom.channels, self.geom.h, self.geom.w]
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let cols = self.n * g.out_plane();
        let xperm = batch_to_channel_major(input, self.n, self.in_channels, g.out_plane());
        let mut col = vec![0.0; g.col_rows() * cols];
        gemm(
            Mat::t(kernel, self.in_channels, g.col_rows()),
            Mat::new(&xperm, self.in_channels, cols),
            &mut col,
            0.0,
        );
        col2im(&col, self.n, g)
    }

    /// Returns `(d input, d kernel)`; the input gradient is skipped unless `need_input`.
    pub fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        need_input: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>) {
        let g = &self.geom;
        let cols = self.n * g.out_plane();
        let gcol = im2col(grad_out, self.n, g);
        let xperm = batch_to_channel_major(input, self.n, self.in_channels, g.out_plane());
        let mut gkernel = vec![0.0; self.in_channels * g.col_rows()];
        gemm(
            Mat::new(&xperm, self.in_channels, cols),
            Mat::t(&gcol, g.col_rows(), cols),
            &mut gkernel,
            0.0,
        );
        if !need_input {
            return (None, gkernel);
        }
        let mut gx = vec![0.0; self.in_channels * cols];
        gemm(
            Mat::new(kernel, self.in_channels, g.col_rows()),
            Mat::new(&gcol, g.col_rows(), cols),
            &mut gx,
            0.0,
        );
        (
            Some(channel_major_to_batch(
                &gx,
                self.n,
                self.in_channels,
                g.out_plane(),
            )),
            gkernel,
        )
    }
}

fn rank4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape)
        .map_err(|_| Error::Dimension(format!("{what} must be rank 4, got shape {shape:?}")))
}
