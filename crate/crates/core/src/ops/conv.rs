//! Direct 3-D cross-correlation (no kernel flip) with zero padding and
//! per-axis strides, plus the backward kernels for input, weights and bias.
//!
//! Layout conventions:
//!   input   (N, C_in, T, H, W)
//!   weights (C_out, C_in, kT, kH, kW)   — C_out in the N slot
//!   bias    (1, C_out, 1, 1, 1)
//!
//! The feature-extraction layers all use kHxkW = 3x3 with unit spatial
//! stride and padding, so that case gets a fused three-tap kernel that keeps
//! one output row in registers while sweeping the contributing input rows;
//! everything else takes a generic row-axpy path. Work is split over
//! independent output (or gradient) planes and every element is written by
//! exactly one task with a fixed accumulation order, so results are bitwise
//! identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::scalar::Scalar;
use crate::shape::Shape5;
use crate::tensor::Tensor5;

/// Geometry of a 3-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kT, kH, kW)
    pub kernel: (usize, usize, usize),
    /// (sT, sH, sW)
    pub stride: (usize, usize, usize),
    /// (pT, pH, pW), zero padding
    pub padding: (usize, usize, usize),
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride, padding }
    }

    /// 3x3x3 kernel, stride 1, padding (pt, 1, 1): the shape-preserving
    /// configuration used by every feature-extraction convolution.
    pub fn same_3x3x3(in_channels: usize, out_channels: usize, pad_t: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, (3, 3, 3), (1, 1, 1), (pad_t, 1, 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be >= 1"));
        }
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        if kt == 0 || kh == 0 || kw == 0 {
            return Err(Error::config("kernel entries must be >= 1"));
        }
        if st == 0 || sh == 0 || sw == 0 {
            return Err(Error::config("strides must be >= 1"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape5 {
        let (kt, kh, kw) = self.kernel;
        Shape5::new(self.out_channels, self.in_channels, kt, kh, kw)
    }

    pub fn bias_shape(&self) -> Shape5 {
        Shape5::new(1, self.out_channels, 1, 1, 1)
    }

    /// Output extents; errors when an axis would collapse below 1.
    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::config(format!(
                "input has {} channels, spec expects {}",
                input.c, self.in_channels
            )));
        }
        let out_axis = |len: usize, k: usize, s: usize, p: usize, axis: char| -> Result<usize> {
            let padded = len + 2 * p;
            if padded < k {
                return Err(Error::InputTooSmall { axis, needed: k.saturating_sub(2 * p), got: len });
            }
            Ok((padded - k) / s + 1)
        };
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let (pt, ph, pw) = self.padding;
        let t = out_axis(input.t, kt, st, pt, 't')?;
        let h = out_axis(input.h, kh, sh, ph, 'h')?;
        let w = out_axis(input.w, kw, sw, pw, 'w')?;
        Ok(Shape5::new(input.n, self.out_channels, t, h, w))
    }

    /// True when the fused three-tap row kernel applies.
    fn spatial_3x3_unit(&self) -> bool {
        self.kernel.1 == 3
            && self.kernel.2 == 3
            && self.stride == (1, 1, 1)
            && self.padding.1 == 1
            && self.padding.2 == 1
    }
}

/// Range of output coordinates `o` with `o*stride + k_off - pad` inside
/// `[0, in_len)`, clipped to `[0, out_len)`. Returns `None` when empty.
#[inline]
fn out_range(
    in_len: usize,
    out_len: usize,
    k_off: usize,
    pad: usize,
    stride: usize,
) -> Option<(usize, usize)> {
    let lo_num = pad as isize - k_off as isize;
    let lo = if lo_num <= 0 { 0 } else { (lo_num as usize + stride - 1) / stride };
    let hi_num = in_len as isize - 1 + pad as isize - k_off as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num as usize / stride).min(out_len - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi))
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d = *d + k * s;
    }
}

/// Dot product accumulated over 8 independent lanes. The lane layout makes
/// the reduction vectorizable without reassociating a single serial sum, and
/// the order is fixed, so results are reproducible.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut lanes = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for k in 0..LANES {
            lanes[k] = lanes[k] + xa[k] * xb[k];
        }
    }
    let mut acc = T::zero();
    for l in lanes {
        acc = acc + l;
    }
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder().iter()) {
        acc = acc + x * y;
    }
    acc
}

/// acc += w0*row[-1] + w1*row[0] + w2*row[+1] with zero boundary columns.
#[inline]
fn tap3_accumulate<T: Scalar>(acc: &mut [T], row: &[T], w0: T, w1: T, w2: T) {
    let w = acc.len();
    if w == 1 {
        acc[0] = acc[0] + w1 * row[0];
        return;
    }
    acc[0] = acc[0] + w1 * row[0] + w2 * row[1];
    let inner = &mut acc[1..w - 1];
    let r0 = &row[0..w - 2];
    let r1 = &row[1..w - 1];
    let r2 = &row[2..w];
    for (((a, &a0), &a1), &a2) in inner.iter_mut().zip(r0).zip(r1).zip(r2) {
        *a = *a + w0 * a0 + w1 * a1 + w2 * a2;
    }
    acc[w - 1] = acc[w - 1] + w0 * row[w - 2] + w1 * row[w - 1];
}

fn forward_general<T: Scalar>(
    x: &Tensor5<T>,
    weights: &Tensor5<T>,
    bias: Option<&Tensor5<T>>,
    spec: &ConvSpec,
    os: Shape5,
) -> Vec<T> {
    let xs = x.shape();
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;
    let in_plane = xs.t * xs.h * xs.w;
    let out_plane = os.t * os.h * os.w;
    let ker = kt * kh * kw;
    let xd = x.data();
    let wd = weights.data();

    let mut out = vec![T::zero(); os.len()];
    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, plane)| {
        let n = idx / os.c;
        let co = idx % os.c;
        if let Some(b) = bias {
            plane.fill(b.data()[co]);
        }
        let xb = &xd[n * xs.c * in_plane..(n + 1) * xs.c * in_plane];
        let wb = &wd[co * spec.in_channels * ker..(co + 1) * spec.in_channels * ker];
        for ci in 0..spec.in_channels {
            let xc = &xb[ci * in_plane..(ci + 1) * in_plane];
            let wc = &wb[ci * ker..(ci + 1) * ker];
            for kti in 0..kt {
                let Some((to_lo, to_hi)) = out_range(xs.t, os.t, kti, pt, st) else { continue };
                for khi in 0..kh {
                    let Some((ho_lo, ho_hi)) = out_range(xs.h, os.h, khi, ph, sh) else {
                        continue;
                    };
                    for kwi in 0..kw {
                        let Some((wo_lo, wo_hi)) = out_range(xs.w, os.w, kwi, pw, sw) else {
                            continue;
                        };
                        let wgt = wc[(kti * kh + khi) * kw + kwi];
                        let len = wo_hi - wo_lo + 1;
                        let wi0 = wo_lo * sw + kwi - pw;
                        for to in to_lo..=to_hi {
                            let ti = to * st + kti - pt;
                            for ho in ho_lo..=ho_hi {
                                let hi = ho * sh + khi - ph;
                                let src0 = (ti * xs.h + hi) * xs.w + wi0;
                                let dst0 = (to * os.h + ho) * os.w + wo_lo;
                                if sw == 1 {
                                    axpy(&mut plane[dst0..dst0 + len], &xc[src0..src0 + len], wgt);
                                } else {
                                    for k in 0..len {
                                        plane[dst0 + k] =
                                            plane[dst0 + k] + wgt * xc[src0 + k * sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Fused path for 3x3 spatial kernels at unit stride/padding: one output row
/// stays in a scratch buffer while all (ci, kt, kh) taps stream past it.
fn forward_fast33<T: Scalar>(
    x: &Tensor5<T>,
    weights: &Tensor5<T>,
    bias: Option<&Tensor5<T>>,
    spec: &ConvSpec,
    os: Shape5,
) -> Vec<T> {
    let xs = x.shape();
    let (kt, _, _) = spec.kernel;
    let pt = spec.padding.0;
    let in_plane = xs.t * xs.h * xs.w;
    let out_plane = os.t * os.h * os.w;
    let ker = kt * 9;
    let xd = x.data();
    let wd = weights.data();
    let w_len = xs.w;

    let mut out = vec![T::zero(); os.len()];
    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, plane)| {
        let n = idx / os.c;
        let co = idx % os.c;
        let bias_v = bias.map(|b| b.data()[co]).unwrap_or_else(T::zero);
        let xb = &xd[n * xs.c * in_plane..(n + 1) * xs.c * in_plane];
        let wb = &wd[co * spec.in_channels * ker..(co + 1) * spec.in_channels * ker];
        let mut acc = vec![T::zero(); w_len];
        for to in 0..os.t {
            for ho in 0..os.h {
                acc.fill(bias_v);
                for ci in 0..spec.in_channels {
                    let xc = &xb[ci * in_plane..(ci + 1) * in_plane];
                    let wc = &wb[ci * ker..(ci + 1) * ker];
                    for kti in 0..kt {
                        let ti = (to + kti) as isize - pt as isize;
                        if ti < 0 || ti >= xs.t as isize {
                            continue;
                        }
                        let tbase = ti as usize * xs.h;
                        for khi in 0..3usize {
                            let hi = (ho + khi) as isize - 1;
                            if hi < 0 || hi >= xs.h as isize {
                                continue;
                            }
                            let row = &xc[(tbase + hi as usize) * w_len..][..w_len];
                            let wk = &wc[(kti * 3 + khi) * 3..][..3];
                            tap3_accumulate(&mut acc, row, wk[0], wk[1], wk[2]);
                        }
                    }
                }
                plane[(to * os.h + ho) * w_len..][..w_len].copy_from_slice(&acc);
            }
        }
    });
    out
}

pub fn conv3d_forward<T: Scalar>(
    x: &Tensor5<T>,
    weights: &Tensor5<T>,
    bias: Option<&Tensor5<T>>,
    spec: &ConvSpec,
) -> Result<Tensor5<T>> {
    let xs = x.shape();
    let os = spec.output_shape(xs)?;
    if weights.shape() != spec.weight_shape() {
        return Err(Error::config(format!(
            "weight shape {} does not match spec {}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != spec.bias_shape() {
            return Err(Error::config(format!(
                "bias shape {} does not match spec {}",
                b.shape(),
                spec.bias_shape()
            )));
        }
    }
    let out = if spec.spatial_3x3_unit() && xs.w >= 2 {
        forward_fast33(x, weights, bias, spec, os)
    } else {
        forward_general(x, weights, bias, spec, os)
    };
    Tensor5::from_vec(os, out)
}

/// Weights with all kernel axes reversed and channel axes swapped, so that
/// the input gradient of a unit-stride convolution is itself a convolution.
fn flip_weights<T: Scalar>(weights: &Tensor5<T>, spec: &ConvSpec) -> Tensor5<T> {
    let (kt, kh, kw) = spec.kernel;
    let ws = weights.shape();
    let fs = Shape5::new(spec.in_channels, spec.out_channels, kt, kh, kw);
    let mut flipped = Tensor5::zeros(fs);
    let src = weights.data();
    let dst = flipped.data_mut();
    for co in 0..spec.out_channels {
        for ci in 0..spec.in_channels {
            for a in 0..kt {
                for b in 0..kh {
                    for c in 0..kw {
                        let s = ws.index(co, ci, a, b, c);
                        let d = fs.index(ci, co, kt - 1 - a, kh - 1 - b, kw - 1 - c);
                        dst[d] = src[s];
                    }
                }
            }
        }
    }
    flipped
}

fn backward_input_general<T: Scalar>(
    grad_out: &Tensor5<T>,
    weights: &Tensor5<T>,
    spec: &ConvSpec,
    input_shape: Shape5,
) -> Tensor5<T> {
    let os = grad_out.shape();
    let xs = input_shape;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;
    let in_plane = xs.t * xs.h * xs.w;
    let out_plane = os.t * os.h * os.w;
    let ker = kt * kh * kw;
    let gd = grad_out.data();
    let wd = weights.data();

    let mut dx = vec![T::zero(); xs.len()];
    dx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, plane)| {
        let n = idx / xs.c;
        let ci = idx % xs.c;
        let gb = &gd[n * os.c * out_plane..(n + 1) * os.c * out_plane];
        for co in 0..os.c {
            let gc = &gb[co * out_plane..(co + 1) * out_plane];
            let wc = &wd[(co * spec.in_channels + ci) * ker..(co * spec.in_channels + ci + 1) * ker];
            for kti in 0..kt {
                let Some((to_lo, to_hi)) = out_range(xs.t, os.t, kti, pt, st) else { continue };
                for khi in 0..kh {
                    let Some((ho_lo, ho_hi)) = out_range(xs.h, os.h, khi, ph, sh) else {
                        continue;
                    };
                    for kwi in 0..kw {
                        let Some((wo_lo, wo_hi)) = out_range(xs.w, os.w, kwi, pw, sw) else {
                            continue;
                        };
                        let wgt = wc[(kti * kh + khi) * kw + kwi];
                        let len = wo_hi - wo_lo + 1;
                        let wi0 = wo_lo * sw + kwi - pw;
                        for to in to_lo..=to_hi {
                            let ti = to * st + kti - pt;
                            for ho in ho_lo..=ho_hi {
                                let hi = ho * sh + khi - ph;
                                let dst0 = (ti * xs.h + hi) * xs.w + wi0;
                                let src0 = (to * os.h + ho) * os.w + wo_lo;
                                if sw == 1 {
                                    axpy(&mut plane[dst0..dst0 + len], &gc[src0..src0 + len], wgt);
                                } else {
                                    for k in 0..len {
                                        plane[dst0 + k * sw] =
                                            plane[dst0 + k * sw] + wgt * gc[src0 + k];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor5::from_vec(xs, dx).expect("dx length computed from shape")
}

/// Gradient w.r.t. the input.
pub fn conv3d_backward_input<T: Scalar>(
    grad_out: &Tensor5<T>,
    weights: &Tensor5<T>,
    spec: &ConvSpec,
    input_shape: Shape5,
) -> Tensor5<T> {
    // At unit stride the input gradient is a convolution of the output
    // gradient with the flipped kernel and complementary padding, which
    // reuses the fused forward path.
    if spec.stride == (1, 1, 1) {
        let (kt, kh, kw) = spec.kernel;
        let (pt, ph, pw) = spec.padding;
        let tspec = ConvSpec::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            (1, 1, 1),
            (kt - 1 - pt, kh - 1 - ph, kw - 1 - pw),
        );
        let flipped = flip_weights(weights, spec);
        let dx = conv3d_forward(grad_out, &flipped, None, &tspec)
            .expect("transpose geometry is valid by construction");
        debug_assert_eq!(dx.shape(), input_shape);
        return dx;
    }
    backward_input_general(grad_out, weights, spec, input_shape)
}

/// Gradient w.r.t. the weights, one (co, ci) kernel slice per task.
pub fn conv3d_backward_weights<T: Scalar>(
    grad_out: &Tensor5<T>,
    x: &Tensor5<T>,
    spec: &ConvSpec,
) -> Tensor5<T> {
    if spec.spatial_3x3_unit() && x.shape().w >= 2 {
        return backward_weights_fast33(grad_out, x, spec);
    }
    backward_weights_general(grad_out, x, spec)
}

fn backward_weights_general<T: Scalar>(
    grad_out: &Tensor5<T>,
    x: &Tensor5<T>,
    spec: &ConvSpec,
) -> Tensor5<T> {
    let os = grad_out.shape();
    let xs = x.shape();
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let (pt, ph, pw) = spec.padding;
    let in_plane = xs.t * xs.h * xs.w;
    let out_plane = os.t * os.h * os.w;
    let ker = kt * kh * kw;
    let gd = grad_out.data();
    let xd = x.data();

    let mut dw = vec![T::zero(); spec.weight_shape().len()];
    dw.par_chunks_mut(ker).enumerate().for_each(|(idx, kslice)| {
        let co = idx / spec.in_channels;
        let ci = idx % spec.in_channels;
        for kti in 0..kt {
            let Some((to_lo, to_hi)) = out_range(xs.t, os.t, kti, pt, st) else { continue };
            for khi in 0..kh {
                let Some((ho_lo, ho_hi)) = out_range(xs.h, os.h, khi, ph, sh) else { continue };
                for kwi in 0..kw {
                    let Some((wo_lo, wo_hi)) = out_range(xs.w, os.w, kwi, pw, sw) else {
                        continue;
                    };
                    let len = wo_hi - wo_lo + 1;
                    let wi0 = wo_lo * sw + kwi - pw;
                    let mut acc = T::zero();
                    for n in 0..xs.n {
                        let gc = &gd[(n * os.c + co) * out_plane..(n * os.c + co + 1) * out_plane];
                        let xc = &xd[(n * xs.c + ci) * in_plane..(n * xs.c + ci + 1) * in_plane];
                        for to in to_lo..=to_hi {
                            let ti = to * st + kti - pt;
                            for ho in ho_lo..=ho_hi {
                                let hi = ho * sh + khi - ph;
                                let src0 = (ti * xs.h + hi) * xs.w + wi0;
                                let g0 = (to * os.h + ho) * os.w + wo_lo;
                                if sw == 1 {
                                    acc = acc + dot(&gc[g0..g0 + len], &xc[src0..src0 + len]);
                                } else {
                                    for k in 0..len {
                                        acc = acc + gc[g0 + k] * xc[src0 + k * sw];
                                    }
                                }
                            }
                        }
                    }
                    kslice[(kti * kh + khi) * kw + kwi] = acc;
                }
            }
        }
    });

    Tensor5::from_vec(spec.weight_shape(), dw).expect("dw length computed from shape")
}

/// Three shifted dot products per (gout row, x row) pair, so each row pair
/// is loaded once for the whole kW axis. Same lane-split scheme as [`dot`].
#[inline]
fn tap3_dots<T: Scalar>(g: &[T], row: &[T]) -> (T, T, T) {
    const LANES: usize = 8;
    let w = g.len();
    // Over j in [0, w-1): d0 += g[j+1]*row[j]; d1 += g[j]*row[j];
    // d2 += g[j]*row[j+1]; then the missing d1 tail term is added below.
    let g0 = &g[..w - 1];
    let g1 = &g[1..];
    let r0 = &row[..w - 1];
    let r1 = &row[1..];
    let mut l0 = [T::zero(); LANES];
    let mut l1 = [T::zero(); LANES];
    let mut l2 = [T::zero(); LANES];
    let chunks = (w - 1) / LANES;
    for i in 0..chunks {
        let b = i * LANES;
        let (cg0, cg1) = (&g0[b..b + LANES], &g1[b..b + LANES]);
        let (cr0, cr1) = (&r0[b..b + LANES], &r1[b..b + LANES]);
        for k in 0..LANES {
            l0[k] = l0[k] + cg1[k] * cr0[k];
            l1[k] = l1[k] + cg0[k] * cr0[k];
            l2[k] = l2[k] + cg0[k] * cr1[k];
        }
    }
    let mut d0 = T::zero();
    let mut d1 = T::zero();
    let mut d2 = T::zero();
    for k in 0..LANES {
        d0 = d0 + l0[k];
        d1 = d1 + l1[k];
        d2 = d2 + l2[k];
    }
    for j in chunks * LANES..w - 1 {
        d0 = d0 + g1[j] * r0[j];
        d1 = d1 + g0[j] * r0[j];
        d2 = d2 + g0[j] * r1[j];
    }
    d1 = d1 + g[w - 1] * row[w - 1];
    (d0, d1, d2)
}

fn backward_weights_fast33<T: Scalar>(
    grad_out: &Tensor5<T>,
    x: &Tensor5<T>,
    spec: &ConvSpec,
) -> Tensor5<T> {
    let os = grad_out.shape();
    let xs = x.shape();
    let (kt, _, _) = spec.kernel;
    let pt = spec.padding.0;
    let in_plane = xs.t * xs.h * xs.w;
    let out_plane = os.t * os.h * os.w;
    let ker = kt * 9;
    let gd = grad_out.data();
    let xd = x.data();
    let w_len = xs.w;

    let mut dw = vec![T::zero(); spec.weight_shape().len()];
    dw.par_chunks_mut(spec.in_channels * ker).enumerate().for_each(|(co, co_slice)| {
        for n in 0..xs.n {
            let gplane = &gd[(n * os.c + co) * out_plane..(n * os.c + co + 1) * out_plane];
            for to in 0..os.t {
                for ho in 0..os.h {
                    let g = &gplane[(to * os.h + ho) * w_len..][..w_len];
                    for ci in 0..spec.in_channels {
                        let xc = &xd[(n * xs.c + ci) * in_plane..(n * xs.c + ci + 1) * in_plane];
                        let kbase = ci * ker;
                        for kti in 0..kt {
                            let ti = (to + kti) as isize - pt as isize;
                            if ti < 0 || ti >= xs.t as isize {
                                continue;
                            }
                            let tbase = ti as usize * xs.h;
                            for khi in 0..3usize {
                                let hi = (ho + khi) as isize - 1;
                                if hi < 0 || hi >= xs.h as isize {
                                    continue;
                                }
                                let row = &xc[(tbase + hi as usize) * w_len..][..w_len];
                                let (d0, d1, d2) = tap3_dots(g, row);
                                let k = kbase + (kti * 3 + khi) * 3;
                                co_slice[k] = co_slice[k] + d0;
                                co_slice[k + 1] = co_slice[k + 1] + d1;
                                co_slice[k + 2] = co_slice[k + 2] + d2;
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor5::from_vec(spec.weight_shape(), dw).expect("dw length computed from shape")
}

pub fn conv3d_backward_bias<T: Scalar>(grad_out: &Tensor5<T>, spec: &ConvSpec) -> Tensor5<T> {
    let os = grad_out.shape();
    let out_plane = os.t * os.h * os.w;
    let gd = grad_out.data();
    let mut db = vec![T::zero(); os.c];
    for n in 0..os.n {
        for (co, slot) in db.iter_mut().enumerate() {
            let gc = &gd[(n * os.c + co) * out_plane..(n * os.c + co + 1) * out_plane];
            *slot = *slot + gc.iter().copied().sum();
        }
    }
    Tensor5::from_vec(spec.bias_shape(), db).expect("db length computed from shape")
}

impl<T: Scalar> GradGraph<T> {
    /// Differentiable 3-D cross-correlation of `x` with `weights` (+ bias).
    pub fn conv3d(
        &mut self,
        x: Var,
        weights: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(weights).clone();
        let bv = bias.map(|b| self.value(b).clone());
        let y = conv3d_forward(&xv, &wv, bv.as_ref(), spec)?;

        let spec = *spec;
        let need_dx = self.needs_grad(x);
        let need_dw = self.needs_grad(weights);
        let need_db = bias.map(|b| self.needs_grad(b)).unwrap_or(false);
        let mut parents = vec![x, weights];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.push_op(y, &parents, move || {
            Box::new(move |gout, store| {
                if need_dx {
                    store.accumulate(x, conv3d_backward_input(gout, &wv, &spec, xv.shape()));
                }
                if need_dw {
                    store.accumulate(weights, conv3d_backward_weights(gout, &xv, &spec));
                }
                if need_db {
                    store.accumulate(bias.unwrap(), conv3d_backward_bias(gout, &spec));
                }
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ones(shape: Shape5) -> Tensor5<f64> {
        Tensor5::filled(shape, 1.0)
    }

    #[test]
    fn all_ones_3x3x3_sums_to_27() {
        let spec = ConvSpec::new(1, 1, (3, 3, 3), (1, 1, 1), (0, 0, 0));
        let x = ones(Shape5::new(1, 1, 3, 3, 3));
        let w = ones(spec.weight_shape());
        let y = conv3d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape5::new(1, 1, 1, 1, 1));
        assert_eq!(y.scalar_value(), 27.0);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let spec = ConvSpec::same_3x3x3(1, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor5::<f64>::uniform(Shape5::new(2, 1, 4, 5, 6), -1.0, 1.0, &mut rng);
        let mut w = Tensor5::zeros(spec.weight_shape());
        w.set(0, 0, 1, 1, 1, 1.0);
        let y = conv3d_forward(&x, &w, None, &spec).unwrap();
        assert!(y.bitwise_eq(&x.clone().with_requires_grad(false)));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let spec = ConvSpec::new(2, 1, (1, 1, 1), (1, 1, 1), (0, 0, 0));
        let x = ones(Shape5::new(1, 1, 1, 1, 1));
        let w = ones(spec.weight_shape());
        assert!(matches!(
            conv3d_forward(&x, &w, None, &spec),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_small_input_names_axis() {
        let spec = ConvSpec::new(1, 1, (3, 3, 3), (1, 1, 1), (0, 0, 0));
        let err = spec.output_shape(Shape5::new(1, 1, 2, 8, 8)).unwrap_err();
        match err {
            Error::InputTooSmall { axis, needed, got } => {
                assert_eq!(axis, 't');
                assert_eq!(needed, 3);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bias_broadcasts_per_output_channel() {
        let spec = ConvSpec::new(1, 2, (1, 1, 1), (1, 1, 1), (0, 0, 0));
        let x = Tensor5::zeros(Shape5::new(1, 1, 1, 1, 3));
        let w = ones(spec.weight_shape());
        let b = Tensor5::from_vec(spec.bias_shape(), vec![0.5, -2.0]).unwrap();
        let y = conv3d_forward(&x, &w, Some(&b), &spec).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn fast_and_general_paths_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for pad_t in [0usize, 1] {
            let spec = ConvSpec::same_3x3x3(3, 2, pad_t);
            let x = Tensor5::<f64>::uniform(Shape5::new(2, 3, 4, 6, 5), -1.0, 1.0, &mut rng);
            let w = Tensor5::<f64>::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = Tensor5::<f64>::uniform(spec.bias_shape(), -1.0, 1.0, &mut rng);
            let os = spec.output_shape(x.shape()).unwrap();
            let fast = forward_fast33(&x, &w, Some(&b), &spec, os);
            let gen = forward_general(&x, &w, Some(&b), &spec, os);
            let max = fast
                .iter()
                .zip(gen.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max <= 1e-12, "paths diverge by {max}");
        }
    }

    #[test]
    fn flipped_forward_matches_general_input_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let spec = ConvSpec::same_3x3x3(2, 3, 1);
        let xs = Shape5::new(2, 2, 3, 5, 4);
        let gout = Tensor5::<f64>::uniform(spec.output_shape(xs).unwrap(), -1.0, 1.0, &mut rng);
        let w = Tensor5::<f64>::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let via_flip = conv3d_backward_input(&gout, &w, &spec, xs);
        let via_general = backward_input_general(&gout, &w, &spec, xs);
        assert!(via_flip.max_abs_diff(&via_general) <= 1e-12);
    }

    #[test]
    fn fast_weight_gradient_matches_general() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let spec = ConvSpec::same_3x3x3(3, 2, 1);
        let xs = Shape5::new(2, 3, 3, 6, 5);
        let x = Tensor5::<f64>::uniform(xs, -1.0, 1.0, &mut rng);
        let gout = Tensor5::<f64>::uniform(spec.output_shape(xs).unwrap(), -1.0, 1.0, &mut rng);
        let fast = backward_weights_fast33(&gout, &x, &spec);
        let gen = backward_weights_general(&gout, &x, &spec);
        assert!(fast.max_abs_diff(&gen) <= 1e-12);
    }
}
