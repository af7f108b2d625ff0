//! Per-strip linear maps: every H position gets its own weight matrix.

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::scalar::Scalar;
use crate::shape::Shape5;
use crate::tensor::Tensor5;

/// Weight shape for `strips` independent `(out x in)` matrices, stored as
/// `(strips, out, in, 1, 1)`.
pub fn strip_weight_shape(strips: usize, out_features: usize, in_features: usize) -> Shape5 {
    Shape5::new(strips, out_features, in_features, 1, 1)
}

impl<T: Scalar> GradGraph<T> {
    /// Applies matrix `W_h` to strip `h`: input `(N, C_in, 1, H, 1)`,
    /// weights `(H, C_out, C_in, 1, 1)`, output `(N, C_out, 1, H, 1)`.
    /// No weight sharing across strips and no bias.
    pub fn strip_linear(&mut self, x: Var, weights: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(weights).clone();
        let xs = xv.shape();
        let ws = wv.shape();
        if xs.t != 1 || xs.w != 1 {
            return Err(Error::Contract(format!(
                "strip_linear input must have T=1 and W=1, got {xs}"
            )));
        }
        if ws.n != xs.h || ws.c == 0 || ws.t != xs.c || ws.h != 1 || ws.w != 1 {
            return Err(Error::config(format!(
                "strip weights {ws} do not match input {xs}: expected ({}, out, {}, 1, 1)",
                xs.h, xs.c
            )));
        }
        let (strips, c_out, c_in) = (ws.n, ws.c, ws.t);
        let os = Shape5::new(xs.n, c_out, 1, strips, 1);

        let forward = |xv: &Tensor5<T>, wv: &Tensor5<T>| -> Tensor5<T> {
            let xd = xv.data();
            let wd = wv.data();
            let mut out = Tensor5::zeros(os);
            let od = out.data_mut();
            for n in 0..xs.n {
                for h in 0..strips {
                    for co in 0..c_out {
                        let wrow = &wd[(h * c_out + co) * c_in..(h * c_out + co + 1) * c_in];
                        let mut acc = T::zero();
                        for (ci, &wgt) in wrow.iter().enumerate() {
                            acc = acc + wgt * xd[xs.index(n, ci, 0, h, 0)];
                        }
                        od[os.index(n, co, 0, h, 0)] = acc;
                    }
                }
            }
            out
        };
        let y = forward(&xv, &wv);

        let need_x = self.needs_grad(x);
        let need_w = self.needs_grad(weights);
        Ok(self.push_op(y, &[x, weights], move || {
            Box::new(move |gout, store| {
                let gd = gout.data();
                if need_x {
                    let mut dx = Tensor5::zeros(xs);
                    let dxd = dx.data_mut();
                    let wd = wv.data();
                    for n in 0..xs.n {
                        for h in 0..strips {
                            for co in 0..c_out {
                                let g = gd[os.index(n, co, 0, h, 0)];
                                let wrow =
                                    &wd[(h * c_out + co) * c_in..(h * c_out + co + 1) * c_in];
                                for (ci, &wgt) in wrow.iter().enumerate() {
                                    let i = xs.index(n, ci, 0, h, 0);
                                    dxd[i] = dxd[i] + g * wgt;
                                }
                            }
                        }
                    }
                    store.accumulate(x, dx);
                }
                if need_w {
                    let mut dw = Tensor5::zeros(ws);
                    let dwd = dw.data_mut();
                    let xd = xv.data();
                    for n in 0..xs.n {
                        for h in 0..strips {
                            for co in 0..c_out {
                                let g = gd[os.index(n, co, 0, h, 0)];
                                let base = (h * c_out + co) * c_in;
                                for ci in 0..c_in {
                                    dwd[base + ci] =
                                        dwd[base + ci] + g * xd[xs.index(n, ci, 0, h, 0)];
                                }
                            }
                        }
                    }
                    store.accumulate(weights, dw);
                }
            })
        }))
    }
}
