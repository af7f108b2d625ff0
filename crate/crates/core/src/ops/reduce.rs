//! Reductions: max/mean along one axis (keeping it at length 1), global sum,
//! and 2x2 spatial max pooling. Max reductions route the gradient to the
//! first maximal element in scan order (lowest linear index on ties).

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::scalar::Scalar;
use crate::shape::{Axis, Shape5};
use crate::tensor::Tensor5;

/// Iterate the reduced tensor: yields (output index, base input index) with
/// the input stride of the reduced axis.
fn reduced_geometry(shape: Shape5, axis: Axis) -> (Shape5, usize, usize) {
    let out = shape.with_axis(axis, 1);
    (out, shape.axis_stride(axis), shape.axis_len(axis))
}

/// Base input index for each output position of a reduction over `axis`.
fn base_indices(shape: Shape5, axis: Axis) -> Vec<usize> {
    let out = shape.with_axis(axis, 1);
    let mut bases = Vec::with_capacity(out.len());
    for n in 0..out.n {
        for c in 0..out.c {
            for t in 0..out.t {
                for h in 0..out.h {
                    for w in 0..out.w {
                        bases.push(shape.index(n, c, t, h, w));
                    }
                }
            }
        }
    }
    bases
}

impl<T: Scalar> GradGraph<T> {
    /// Max along `axis`, result keeps the axis at length 1.
    pub fn max_over_axis(&mut self, x: Var, axis: Axis) -> Var {
        let xv = self.value(x).clone();
        let (os, stride, len) = reduced_geometry(xv.shape(), axis);
        let bases = base_indices(xv.shape(), axis);
        let xd = xv.data();
        let mut out = Vec::with_capacity(os.len());
        let mut arg = Vec::with_capacity(os.len());
        for &b in &bases {
            let mut best = xd[b];
            let mut best_j = 0usize;
            for j in 1..len {
                let v = xd[b + j * stride];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            out.push(best);
            arg.push((b + best_j * stride) as u64);
        }
        let y = Tensor5::from_vec(os, out).expect("length from shape");
        let in_shape = xv.shape();
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let mut g = Tensor5::zeros(in_shape);
                let gd = g.data_mut();
                for (&a, &gv) in arg.iter().zip(gout.data().iter()) {
                    gd[a as usize] = gd[a as usize] + gv;
                }
                store.accumulate(x, g);
            })
        })
    }

    /// Arithmetic mean along `axis`, result keeps the axis at length 1.
    pub fn mean_over_axis(&mut self, x: Var, axis: Axis) -> Var {
        let xv = self.value(x).clone();
        let (os, stride, len) = reduced_geometry(xv.shape(), axis);
        let bases = base_indices(xv.shape(), axis);
        let xd = xv.data();
        let inv = T::one() / T::from_f64(len as f64);
        let mut out = Vec::with_capacity(os.len());
        for &b in &bases {
            let mut acc = T::zero();
            for j in 0..len {
                acc = acc + xd[b + j * stride];
            }
            out.push(acc * inv);
        }
        let y = Tensor5::from_vec(os, out).expect("length from shape");
        let in_shape = xv.shape();
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let mut g = Tensor5::zeros(in_shape);
                let gd = g.data_mut();
                for (&b, &gv) in bases.iter().zip(gout.data().iter()) {
                    let gs = gv * inv;
                    for j in 0..len {
                        gd[b + j * stride] = gd[b + j * stride] + gs;
                    }
                }
                store.accumulate(x, g);
            })
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Tensor5::scalar(xv.sum());
        let in_shape = xv.shape();
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                store.accumulate(x, Tensor5::filled(in_shape, gout.scalar_value()));
            })
        })
    }

    /// 2x2 max pooling over (H, W) with stride 2; T is untouched.
    /// Requires even H and W.
    pub fn spatial_max_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let xs = xv.shape();
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(Error::config(format!(
                "spatial_max_pool requires even H and W, got H={} W={}",
                xs.h, xs.w
            )));
        }
        let os = Shape5::new(xs.n, xs.c, xs.t, xs.h / 2, xs.w / 2);
        let xd = xv.data();
        let mut out = Vec::with_capacity(os.len());
        let mut arg = Vec::with_capacity(os.len());
        for n in 0..os.n {
            for c in 0..os.c {
                for t in 0..os.t {
                    for ho in 0..os.h {
                        for wo in 0..os.w {
                            let mut best = T::neg_infinity();
                            let mut best_i = 0usize;
                            for dh in 0..2 {
                                for dw in 0..2 {
                                    let i = xs.index(n, c, t, ho * 2 + dh, wo * 2 + dw);
                                    if xd[i] > best {
                                        best = xd[i];
                                        best_i = i;
                                    }
                                }
                            }
                            out.push(best);
                            arg.push(best_i as u64);
                        }
                    }
                }
            }
        }
        let y = Tensor5::from_vec(os, out)?;
        Ok(self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let mut g = Tensor5::zeros(xs);
                let gd = g.data_mut();
                for (&a, &gv) in arg.iter().zip(gout.data().iter()) {
                    gd[a as usize] = gd[a as usize] + gv;
                }
                store.accumulate(x, g);
            })
        }))
    }
}
