//! Network building blocks: temporal aggregation (LTA), combined
//! global/local convolution (GLConv), spatial/temporal pooling, weighted-sum
//! and generalized-mean feature mapping, and per-strip fully connected maps.
//!
//! Each block is a pure function of (inputs, parameters) recorded on a
//! [`GradGraph`]; activations are applied by the caller, so the algebraic
//! identities of the raw blocks (e.g. GLConvA with one part and tied weights
//! doubling a plain convolution) hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::ops::ConvSpec;
use crate::scalar::Scalar;
use crate::shape::Axis;

/// Strided temporal convolution that downsamples T while preserving (H, W).
/// Kernel `(a, 1, 1)`, stride `(b, 1, 1)`, no temporal padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LtaConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Temporal kernel size (a).
    pub kernel_t: usize,
    /// Temporal stride (b).
    pub stride_t: usize,
}

impl LtaConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        LtaConfig { in_channels, out_channels, kernel_t: 3, stride_t: 3 }
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::new(
            self.in_channels,
            self.out_channels,
            (self.kernel_t, 1, 1),
            (self.stride_t, 1, 1),
            (0, 0, 0),
        )
    }
}

/// Output of LTA: `(N, out, floor((T - a)/b) + 1, H, W)`.
pub fn lta_forward<T: Scalar>(
    g: &mut GradGraph<T>,
    x: Var,
    cfg: &LtaConfig,
    weights: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let t = g.value(x).shape().t;
    if t < cfg.kernel_t {
        return Err(Error::InputTooSmall { axis: 't', needed: cfg.kernel_t, got: t });
    }
    g.conv3d(x, weights, bias, &cfg.conv_spec())
}

/// How the global and local branches of a GLConv are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Element-wise addition; output height equals input height.
    Add,
    /// Concatenation along H; output height is doubled.
    ConcatHeight,
}

/// Combined global/local convolution: a whole-map 3x3x3 convolution plus
/// per-part convolutions (all parts sharing one kernel) over `n_parts`
/// horizontal bands, merged by addition or height concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub n_parts: usize,
    pub combine: CombineMode,
    /// Branch switches for ablations; at least one must stay on.
    pub global_on: bool,
    pub local_on: bool,
}

impl GlConvConfig {
    pub fn new(in_channels: usize, out_channels: usize, n_parts: usize, combine: CombineMode) -> Self {
        GlConvConfig {
            in_channels,
            out_channels,
            n_parts,
            combine,
            global_on: true,
            local_on: true,
        }
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::same_3x3x3(self.in_channels, self.out_channels, 1)
    }

    pub fn validate(&self, input_h: usize) -> Result<()> {
        if self.n_parts == 0 {
            return Err(Error::config("n_parts must be >= 1"));
        }
        if input_h % self.n_parts != 0 {
            return Err(Error::config(format!(
                "feature height {} is not divisible by n_parts {}",
                input_h, self.n_parts
            )));
        }
        if !self.global_on && !self.local_on {
            return Err(Error::config("at least one GLConv branch must be enabled"));
        }
        Ok(())
    }
}

/// Parameter handles for one GLConv layer; a disabled branch has none.
#[derive(Clone, Copy, Debug)]
pub struct GlConvWeights {
    pub global: Option<(Var, Var)>,
    pub local: Option<(Var, Var)>,
}

pub fn glconv_forward<T: Scalar>(
    g: &mut GradGraph<T>,
    x: Var,
    cfg: &GlConvConfig,
    weights: &GlConvWeights,
) -> Result<Var> {
    let xs = g.value(x).shape();
    cfg.validate(xs.h)?;
    let spec = cfg.conv_spec();

    let global = match (cfg.global_on, weights.global) {
        (true, Some((w, b))) => Some(g.conv3d(x, w, Some(b), &spec)?),
        (true, None) => return Err(Error::config("global branch enabled but has no weights")),
        (false, _) => None,
    };

    let local = match (cfg.local_on, weights.local) {
        (true, Some((w, b))) => {
            let part_h = xs.h / cfg.n_parts;
            let mut parts = Vec::with_capacity(cfg.n_parts);
            for i in 0..cfg.n_parts {
                let band = g.slice_height(x, i * part_h, part_h)?;
                parts.push(g.conv3d(band, w, Some(b), &spec)?);
            }
            Some(g.concat_height(&parts)?)
        }
        (true, None) => return Err(Error::config("local branch enabled but has no weights")),
        (false, _) => None,
    };

    match (global, local, cfg.combine) {
        (Some(gl), Some(lo), CombineMode::Add) => g.add(gl, lo),
        (Some(gl), Some(lo), CombineMode::ConcatHeight) => g.concat_height(&[gl, lo]),
        // A disabled branch contributes zeros; for Add that is the surviving
        // branch alone, for concat the missing half stays zero.
        (Some(gl), None, CombineMode::Add) | (None, Some(gl), CombineMode::Add) => Ok(gl),
        (Some(gl), None, CombineMode::ConcatHeight) => {
            let z = g.constant(crate::tensor::Tensor5::zeros(g.value(gl).shape()));
            g.concat_height(&[gl, z])
        }
        (None, Some(lo), CombineMode::ConcatHeight) => {
            let z = g.constant(crate::tensor::Tensor5::zeros(g.value(lo).shape()));
            g.concat_height(&[z, lo])
        }
        (None, None, _) => unreachable!("validate() rejects both branches off"),
    }
}

/// Max over the frame axis, collapsing T to 1.
pub fn temporal_pool<T: Scalar>(g: &mut GradGraph<T>, x: Var) -> Var {
    g.max_over_axis(x, Axis::T)
}

/// `alpha * max_W + beta * mean_W`, collapsing W to 1. The coefficients are
/// fixed constants (the non-learned mapping baselines).
pub fn weighted_sum_map<T: Scalar>(g: &mut GradGraph<T>, x: Var, alpha: T, beta: T) -> Result<Var> {
    if alpha == T::zero() {
        let mean = g.mean_over_axis(x, Axis::W);
        return Ok(g.scale(mean, beta));
    }
    if beta == T::zero() {
        let max = g.max_over_axis(x, Axis::W);
        return Ok(g.scale(max, alpha));
    }
    let max = g.max_over_axis(x, Axis::W);
    let max = g.scale(max, alpha);
    let mean = g.mean_over_axis(x, Axis::W);
    let mean = g.scale(mean, beta);
    g.add(max, mean)
}

/// Generalized-mean pooling over W with a learnable exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    /// Initial exponent value.
    pub p_init: f64,
    /// Lower clamp applied before exponentiation; must be > 0.
    pub clamp_eps: f64,
}

impl Default for GemConfig {
    fn default() -> Self {
        GemConfig { p_init: 6.5, clamp_eps: 1e-6 }
    }
}

/// `(mean_W clamp(v, eps)^p)^(1/p)`, collapsing W to 1; differentiable in
/// both the input and the exponent `p` (a scalar parameter Var).
pub fn gem_pool<T: Scalar>(g: &mut GradGraph<T>, x: Var, p: Var, clamp_eps: f64) -> Result<Var> {
    if clamp_eps <= 0.0 {
        return Err(Error::config("gem clamp_eps must be > 0"));
    }
    let clamped = g.clamp_min(x, T::from_f64(clamp_eps));
    let powered = g.pow_p(clamped, p)?;
    let mean = g.mean_over_axis(powered, Axis::W);
    g.pow_inv_p(mean, p)
}

/// Per-strip fully connected mapping; see [`GradGraph::strip_linear`].
pub fn separate_fc<T: Scalar>(g: &mut GradGraph<T>, x: Var, weights: Var) -> Result<Var> {
    g.strip_linear(x, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape5;
    use crate::tensor::Tensor5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: Shape5, seed: u64) -> Tensor5<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor5::uniform(shape, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn lta_shape_30_to_10() {
        let cfg = LtaConfig::new(2, 3);
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(rand_t(Shape5::new(1, 2, 30, 6, 5), 0));
        let w = g.constant(rand_t(cfg.conv_spec().weight_shape(), 1));
        let y = lta_forward(&mut g, x, &cfg, w, None).unwrap();
        assert_eq!(g.value(y).shape(), Shape5::new(1, 3, 10, 6, 5));
    }

    #[test]
    fn lta_all_ones_kernel_sums_three_frames() {
        let cfg = LtaConfig::new(1, 1);
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(Tensor5::filled(Shape5::new(1, 1, 9, 4, 4), 1.0));
        let w = g.constant(Tensor5::filled(cfg.conv_spec().weight_shape(), 1.0));
        let y = lta_forward(&mut g, x, &cfg, w, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn lta_rejects_short_clips() {
        let cfg = LtaConfig::new(1, 1);
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(Tensor5::zeros(Shape5::new(1, 1, 2, 4, 4)));
        let w = g.constant(Tensor5::zeros(cfg.conv_spec().weight_shape()));
        assert!(matches!(
            lta_forward(&mut g, x, &cfg, w, None),
            Err(Error::InputTooSmall { axis: 't', .. })
        ));
    }

    #[test]
    fn lta_matches_plain_strided_conv() {
        let cfg = LtaConfig::new(2, 2);
        let mut g = GradGraph::<f64>::new();
        let xv = rand_t(Shape5::new(2, 2, 12, 5, 4), 7);
        let wv = rand_t(cfg.conv_spec().weight_shape(), 8);
        let x = g.constant(xv.clone());
        let w = g.constant(wv.clone());
        let y = lta_forward(&mut g, x, &cfg, w, None).unwrap();
        let direct =
            crate::ops::conv::conv3d_forward(&xv, &wv, None, &cfg.conv_spec()).unwrap();
        assert!(g.value(y).bitwise_eq(&direct));
    }

    fn glconv_weights(
        g: &mut GradGraph<f64>,
        cfg: &GlConvConfig,
        seed: u64,
        tied: bool,
    ) -> GlConvWeights {
        let spec = cfg.conv_spec();
        let w1 = rand_t(spec.weight_shape(), seed);
        let b1 = Tensor5::zeros(spec.bias_shape());
        let (w2, b2) = if tied {
            (w1.clone(), b1.clone())
        } else {
            (rand_t(spec.weight_shape(), seed + 1), Tensor5::zeros(spec.bias_shape()))
        };
        GlConvWeights {
            global: Some((g.constant(w1), g.constant(b1))),
            local: Some((g.constant(w2), g.constant(b2))),
        }
    }

    #[test]
    fn glconv_add_one_part_tied_weights_doubles_plain_conv() {
        let cfg = GlConvConfig::new(2, 3, 1, CombineMode::Add);
        let mut g = GradGraph::<f64>::new();
        let xv = rand_t(Shape5::new(1, 2, 4, 6, 5), 21);
        let x = g.constant(xv.clone());
        let weights = glconv_weights(&mut g, &cfg, 22, true);
        let y = glconv_forward(&mut g, x, &cfg, &weights).unwrap();
        let (w, b) = weights.global.unwrap();
        let plain = crate::ops::conv::conv3d_forward(
            &xv,
            g.value(w),
            Some(g.value(b)),
            &cfg.conv_spec(),
        )
        .unwrap();
        let doubled = plain.scale(2.0);
        assert!(g.value(y).max_abs_diff(&doubled) <= 1e-12);
    }

    #[test]
    fn glconv_concat_doubles_height() {
        let cfg = GlConvConfig::new(1, 2, 4, CombineMode::ConcatHeight);
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(rand_t(Shape5::new(1, 1, 3, 32, 5), 31));
        let weights = glconv_weights(&mut g, &cfg, 32, false);
        let y = glconv_forward(&mut g, x, &cfg, &weights).unwrap();
        assert_eq!(g.value(y).shape(), Shape5::new(1, 2, 3, 64, 5));
    }

    #[test]
    fn glconv_local_interior_rows_match_whole_map_conv() {
        // Rows at distance >= 1 from any part boundary see the same
        // neighborhood as a whole-map convolution; boundary rows see the
        // part's zero padding instead.
        let n_parts = 4;
        let mut cfg = GlConvConfig::new(1, 2, n_parts, CombineMode::Add);
        cfg.global_on = false;
        let mut g = GradGraph::<f64>::new();
        let xv = rand_t(Shape5::new(1, 1, 3, 16, 5), 41);
        let x = g.constant(xv.clone());
        let wv = rand_t(cfg.conv_spec().weight_shape(), 42);
        let bv = Tensor5::zeros(cfg.conv_spec().bias_shape());
        let weights = GlConvWeights {
            global: None,
            local: Some((g.constant(wv.clone()), g.constant(bv.clone()))),
        };
        let y = glconv_forward(&mut g, x, &cfg, &weights).unwrap();
        let whole =
            crate::ops::conv::conv3d_forward(&xv, &wv, Some(&bv), &cfg.conv_spec()).unwrap();
        let part_h = 16 / n_parts;
        let ys = g.value(y).shape();
        for h in 0..16usize {
            let within = h % part_h;
            // Rows touching the whole-map edge see zero padding in both
            // computations, so only interior part boundaries can differ.
            let interior = (within >= 1 || h == 0) && (within + 1 < part_h || h == 15);
            let mut max_diff = 0.0f64;
            for c in 0..ys.c {
                for t in 0..ys.t {
                    for w in 0..ys.w {
                        let d = (g.value(y).at(0, c, t, h, w) - whole.at(0, c, t, h, w)).abs();
                        max_diff = max_diff.max(d);
                    }
                }
            }
            if interior {
                assert!(max_diff <= 1e-12, "interior row {h} differs by {max_diff}");
            } else {
                assert!(max_diff > 1e-9, "boundary row {h} unexpectedly matches");
            }
        }
    }

    #[test]
    fn glconv_rejects_indivisible_height() {
        let cfg = GlConvConfig::new(1, 1, 5, CombineMode::Add);
        assert!(matches!(cfg.validate(64), Err(Error::Config(_))));
    }

    #[test]
    fn temporal_pool_is_permutation_invariant() {
        let xv = rand_t(Shape5::new(2, 3, 5, 4, 4), 51);
        let xs = xv.shape();
        // Reverse the frame order.
        let mut rev = Tensor5::zeros(xs);
        for n in 0..xs.n {
            for c in 0..xs.c {
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            rev.set(n, c, xs.t - 1 - t, h, w, xv.at(n, c, t, h, w));
                        }
                    }
                }
            }
        }
        let mut g = GradGraph::new();
        let a = g.constant(xv);
        let b = g.constant(rev);
        let pa = temporal_pool(&mut g, a);
        let pb = temporal_pool(&mut g, b);
        assert!(g.value(pa).bitwise_eq(g.value(pb)));
    }

    #[test]
    fn temporal_pool_single_frame_is_identity() {
        let xv = rand_t(Shape5::new(1, 2, 1, 3, 3), 52);
        let mut g = GradGraph::new();
        let x = g.constant(xv.clone());
        let y = temporal_pool(&mut g, x);
        assert!(g.value(y).bitwise_eq(&xv));
    }

    #[test]
    fn weighted_sum_examples() {
        let row = Tensor5::from_vec(Shape5::new(1, 1, 1, 1, 3), vec![2.0, 4.0, 6.0]).unwrap();
        let mut g = GradGraph::new();
        let x = g.constant(row);
        let avg_only = weighted_sum_map(&mut g, x, 0.0, 1.0).unwrap();
        assert_eq!(g.value(avg_only).data(), &[4.0]);
        let max_only = weighted_sum_map(&mut g, x, 1.0, 0.0).unwrap();
        assert_eq!(g.value(max_only).data(), &[6.0]);
        let both = weighted_sum_map(&mut g, x, 1.0, 1.0).unwrap();
        assert_eq!(g.value(both).data(), &[10.0]);
    }

    #[test]
    fn gem_p1_equals_mean_of_clamped_row() {
        let xv = rand_t(Shape5::new(2, 3, 1, 4, 7), 61);
        let mut g = GradGraph::new();
        let x = g.constant(xv.clone());
        let p = g.constant(Tensor5::scalar(1.0));
        let gem = gem_pool(&mut g, x, p, 1e-6).unwrap();
        let clamped = g.clamp_min(x, 1e-6);
        let mean = g.mean_over_axis(clamped, Axis::W);
        assert!(g.value(gem).max_abs_diff(g.value(mean)) <= 1e-9);
    }

    #[test]
    fn gem_example_row() {
        let row = Tensor5::from_vec(Shape5::new(1, 1, 1, 1, 4), vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        let mut g = GradGraph::new();
        let x = g.constant(row);
        let p = g.constant(Tensor5::scalar(2.0));
        let gem = gem_pool(&mut g, x, p, 1e-6).unwrap();
        let expect = (18.0f64 / 4.0).sqrt(); // 2.12132...
        assert!((g.value(gem).scalar_value() - expect).abs() <= 1e-12);
    }

    #[test]
    fn gem_large_p_approaches_row_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let row = Tensor5::<f64>::uniform(Shape5::new(1, 1, 1, 1, 11), 0.1, 1.0, &mut rng);
        let max = row.data().iter().cloned().fold(f64::MIN, f64::max);
        let mut g = GradGraph::new();
        let x = g.constant(row);
        let p = g.constant(Tensor5::scalar(100.0));
        let gem = gem_pool(&mut g, x, p, 1e-6).unwrap();
        let got = g.value(gem).scalar_value();
        assert!(got <= max + 1e-12);
        assert!((max - got) / max < 0.03, "GeM(100) = {got}, max = {max}");
    }

    #[test]
    fn gem_rejects_nonpositive_p() {
        let mut g = GradGraph::<f64>::new();
        let x = g.constant(Tensor5::filled(Shape5::new(1, 1, 1, 1, 3), 1.0));
        let p = g.constant(Tensor5::scalar(-1.0));
        assert!(matches!(gem_pool(&mut g, x, p, 1e-6), Err(Error::ParamDomain(_))));
    }
}
