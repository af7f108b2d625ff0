//! Pointwise and height-axis structural ops.

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::scalar::Scalar;
use crate::shape::Shape5;
use crate::tensor::Tensor5;

impl<T: Scalar> GradGraph<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let need_a = self.needs_grad(a);
        let need_b = self.needs_grad(b);
        Ok(self.push_op(y, &[a, b], move || {
            Box::new(move |gout, store| {
                if need_a {
                    store.accumulate(a, gout.clone());
                }
                if need_b {
                    store.accumulate(b, gout.clone());
                }
            })
        }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = av.zip_map(&bv, |x, y| x * y)?;
        let need_a = self.needs_grad(a);
        let need_b = self.needs_grad(b);
        Ok(self.push_op(y, &[a, b], move || {
            Box::new(move |gout, store| {
                if need_a {
                    store.accumulate(a, gout.zip_map(&bv, |g, y| g * y).unwrap());
                }
                if need_b {
                    store.accumulate(b, gout.zip_map(&av, |g, x| g * x).unwrap());
                }
            })
        }))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).scale(k);
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| store.accumulate(x, gout.scale(k)))
        })
    }

    /// Leaky rectifier: `v` for `v > 0`, `slope * v` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let xv = self.value(x).clone();
        let y = xv.map(|v| if v > T::zero() { v } else { slope * v });
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let g = gout
                    .zip_map(&xv, |g, v| if v > T::zero() { g } else { g * slope })
                    .unwrap();
                store.accumulate(x, g);
            })
        })
    }

    /// `max(v, floor)`; gradient passes where `v >= floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        let xv = self.value(x).clone();
        let y = xv.map(|v| if v > floor { v } else { floor });
        self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let g = gout
                    .zip_map(&xv, |g, v| if v >= floor { g } else { T::zero() })
                    .unwrap();
                store.accumulate(x, g);
            })
        })
    }

    /// Elementwise power `v^p` with a learnable scalar exponent.
    /// Inputs must be strictly positive (clamp beforehand).
    pub fn pow_p(&mut self, x: Var, p: Var) -> Result<Var> {
        self.pow_impl(x, p, false)
    }

    /// Elementwise root `v^(1/p)` with a learnable scalar exponent.
    pub fn pow_inv_p(&mut self, x: Var, p: Var) -> Result<Var> {
        self.pow_impl(x, p, true)
    }

    fn pow_impl(&mut self, x: Var, p: Var, inverse: bool) -> Result<Var> {
        let pv = self.value(p);
        if !pv.is_scalar() {
            return Err(Error::Contract(format!(
                "exponent must be scalar, got shape {}",
                pv.shape()
            )));
        }
        let p_raw = pv.scalar_value();
        if p_raw <= T::zero() {
            return Err(Error::ParamDomain(format!(
                "power exponent must be > 0, got {p_raw}"
            )));
        }
        let exponent = if inverse { T::one() / p_raw } else { p_raw };
        let xv = self.value(x).clone();
        let y = xv.map(|v| v.powf(exponent));
        let yv = y.clone();
        let need_x = self.needs_grad(x);
        let need_p = self.needs_grad(p);
        Ok(self.push_op(y, &[x, p], move || {
            Box::new(move |gout, store| {
                if need_x {
                    let g = gout
                        .zip_map(&xv, |g, v| g * exponent * v.powf(exponent - T::one()))
                        .unwrap();
                    store.accumulate(x, g);
                }
                if need_p {
                    // d(v^e)/dp = v^e * ln v * de/dp, with de/dp = 1 or -1/p^2.
                    let de_dp =
                        if inverse { -(T::one() / (p_raw * p_raw)) } else { T::one() };
                    let mut acc = T::zero();
                    for ((&g, &v), &yy) in
                        gout.data().iter().zip(xv.data().iter()).zip(yv.data().iter())
                    {
                        acc = acc + g * yy * v.ln() * de_dp;
                    }
                    store.accumulate(p, Tensor5::scalar(acc));
                }
            })
        }))
    }

    /// Stack tensors along H; all other axes must agree.
    pub fn concat_height(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat_height needs at least one part"));
        }
        let shapes: Vec<Shape5> = parts.iter().map(|&p| self.value(p).shape()).collect();
        let base = shapes[0];
        for s in &shapes[1..] {
            if s.with_axis(crate::shape::Axis::H, base.h) != base {
                return Err(Error::config(format!(
                    "concat_height parts must agree off the H axis: {base} vs {s}"
                )));
            }
        }
        let total_h: usize = shapes.iter().map(|s| s.h).sum();
        let os = base.with_axis(crate::shape::Axis::H, total_h);

        let mut out = vec![T::zero(); os.len()];
        let block = base.w; // one H-row
        let rows_per_cell: Vec<usize> = shapes.iter().map(|s| s.h).collect();
        for (pi, &part) in parts.iter().enumerate() {
            let pv = self.value(part);
            let ps = shapes[pi];
            let h_off: usize = rows_per_cell[..pi].iter().sum();
            for n in 0..ps.n {
                for c in 0..ps.c {
                    for t in 0..ps.t {
                        let src0 = ps.index(n, c, t, 0, 0);
                        let dst0 = os.index(n, c, t, h_off, 0);
                        let len = ps.h * block;
                        out[dst0..dst0 + len].copy_from_slice(&pv.data()[src0..src0 + len]);
                    }
                }
            }
        }
        let y = Tensor5::from_vec(os, out)?;

        let parents: Vec<Var> = parts.to_vec();
        let needs: Vec<bool> = parents.iter().map(|&p| self.needs_grad(p)).collect();
        let captured = parents.clone();
        Ok(self.push_op(y, &parents, move || {
            Box::new(move |gout, store| {
                let gs = gout.shape();
                let mut h_off = 0usize;
                for (pi, &part) in captured.iter().enumerate() {
                    let ph = rows_per_cell[pi];
                    if needs[pi] {
                        let ps = gs.with_axis(crate::shape::Axis::H, ph);
                        let mut g = vec![T::zero(); ps.len()];
                        for n in 0..ps.n {
                            for c in 0..ps.c {
                                for t in 0..ps.t {
                                    let src0 = gs.index(n, c, t, h_off, 0);
                                    let dst0 = ps.index(n, c, t, 0, 0);
                                    let len = ph * gs.w;
                                    g[dst0..dst0 + len]
                                        .copy_from_slice(&gout.data()[src0..src0 + len]);
                                }
                            }
                        }
                        store.accumulate(part, Tensor5::from_vec(ps, g).unwrap());
                    }
                    h_off += ph;
                }
            })
        }))
    }

    /// Rows `[start, start+len)` of the H axis.
    pub fn slice_height(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        if len == 0 || start + len > xs.h {
            return Err(Error::config(format!(
                "slice_height [{start}, {}) out of range for H={}",
                start + len,
                xs.h
            )));
        }
        let os = xs.with_axis(crate::shape::Axis::H, len);
        let xv = self.value(x);
        let mut out = vec![T::zero(); os.len()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                for t in 0..xs.t {
                    let src0 = xs.index(n, c, t, start, 0);
                    let dst0 = os.index(n, c, t, 0, 0);
                    let chunk = len * xs.w;
                    out[dst0..dst0 + chunk].copy_from_slice(&xv.data()[src0..src0 + chunk]);
                }
            }
        }
        let y = Tensor5::from_vec(os, out)?;
        Ok(self.push_op(y, &[x], move || {
            Box::new(move |gout, store| {
                let mut g = Tensor5::zeros(xs);
                let gd = g.data_mut();
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        for t in 0..xs.t {
                            let dst0 = xs.index(n, c, t, start, 0);
                            let src0 = os.index(n, c, t, 0, 0);
                            let chunk = len * xs.w;
                            gd[dst0..dst0 + chunk]
                                .copy_from_slice(&gout.data()[src0..src0 + chunk]);
                        }
                    }
                }
                store.accumulate(x, g);
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn concat_height_shape() {
        let mut g = GradGraph::<f64>::new();
        let a = g.constant(Tensor5::zeros(Shape5::new(1, 2, 3, 4, 5)));
        let b = g.constant(Tensor5::zeros(Shape5::new(1, 2, 3, 4, 5)));
        let y = g.concat_height(&[a, b]).unwrap();
        assert_eq!(g.value(y).shape(), Shape5::new(1, 2, 3, 8, 5));
    }

    #[test]
    fn slice_then_concat_reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor5::<f64>::uniform(Shape5::new(2, 3, 2, 8, 5), -1.0, 1.0, &mut rng);
        let mut g = GradGraph::new();
        let xv = g.constant(x.clone());
        let parts: Vec<Var> = (0..4).map(|i| g.slice_height(xv, i * 2, 2).unwrap()).collect();
        let y = g.concat_height(&parts).unwrap();
        assert!(g.value(y).bitwise_eq(&x));
    }

    #[test]
    fn concat_rejects_mismatched_axes() {
        let mut g = GradGraph::<f64>::new();
        let a = g.constant(Tensor5::zeros(Shape5::new(1, 2, 3, 4, 5)));
        let b = g.constant(Tensor5::zeros(Shape5::new(1, 2, 3, 4, 6)));
        assert!(matches!(g.concat_height(&[a, b]), Err(Error::Config(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = GradGraph::<f64>::new();
        let x = g.leaf(
            Tensor5::from_vec(Shape5::new(1, 1, 1, 1, 3), vec![1.0, -2.0, 0.5])
                .unwrap()
                .with_requires_grad(true),
        );
        let s = g.sum_all(x);
        let store = g.backward(s).unwrap();
        assert_eq!(store.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = GradGraph::<f64>::new();
        let x = g.leaf(
            Tensor5::from_vec(Shape5::new(1, 1, 1, 1, 2), vec![1.0, 2.0])
                .unwrap()
                .with_requires_grad(true),
        );
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let store = g.backward(s).unwrap();
        assert_eq!(store.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = GradGraph::<f64>::new();
        let x = g.leaf(Tensor5::zeros(Shape5::new(1, 1, 1, 1, 3)).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn pow_p_rejects_nonpositive_exponent() {
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(Tensor5::filled(Shape5::new(1, 1, 1, 1, 2), 2.0));
        let p = g.constant(Tensor5::scalar(0.0));
        assert!(matches!(g.pow_p(x, p), Err(Error::ParamDomain(_))));
    }

    #[test]
    fn gradient_of_sum_matches_sum_of_gradients() {
        // Linearity of the tape: d(f+g) = df + dg.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xv = Tensor5::<f64>::uniform(Shape5::new(1, 1, 1, 2, 3), -1.0, 1.0, &mut rng)
            .with_requires_grad(true);

        let grad_of = |build: &dyn Fn(&mut GradGraph<f64>, Var) -> Var| -> Tensor5<f64> {
            let mut g = GradGraph::new();
            let x = g.leaf(xv.clone());
            let out = build(&mut g, x);
            g.backward(out).unwrap().take(x).unwrap()
        };

        let ga = grad_of(&|g, x| {
            let y = g.mul(x, x).unwrap();
            g.sum_all(y)
        });
        let gb = grad_of(&|g, x| g.sum_all(x));
        let gsum = grad_of(&|g, x| {
            let y = g.mul(x, x).unwrap();
            let a = g.sum_all(y);
            let b = g.sum_all(x);
            g.add(a, b).unwrap()
        });

        let mut expect = ga.clone();
        expect.add_assign(&gb).unwrap();
        assert!(expect.max_abs_diff(&gsum) <= 1e-15);
    }

    #[test]
    fn slice_height_bounds() {
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(Tensor5::zeros(Shape5::new(1, 1, 1, 4, 2)));
        assert!(g.slice_height(x, 3, 2).is_err());
        let ok = g.slice_height(x, 2, 2).unwrap();
        assert_eq!(g.value(ok).shape().h, 2);
    }

    #[test]
    fn uniform_draws_match_across_dtypes() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor5::<f32>::uniform(Shape5::new(1, 1, 1, 1, 8), -1.0, 1.0, &mut r1);
        let b = Tensor5::<f64>::uniform(Shape5::new(1, 1, 1, 1, 8), -1.0, 1.0, &mut r2);
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(*x, *y as f32);
        }
    }
}
