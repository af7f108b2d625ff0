//! Network assembly: a declarative layer stack is validated by shape
//! propagation, parameters are initialized deterministically from a seed,
//! and the forward pass maps silhouette clips `(N, 1, T, H, W)` to
//! per-strip embeddings `(N, C4, 1, H2, 1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::layers::{
    gem_pool, glconv_forward, lta_forward, separate_fc, temporal_pool, weighted_sum_map,
    CombineMode, GemConfig, GlConvConfig, GlConvWeights, LtaConfig,
};
use crate::ops::{strip_weight_shape, ConvSpec};
use crate::scalar::Scalar;
use crate::shape::Shape5;
use crate::tensor::Tensor5;

/// One stage of the feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Plain 3x3x3 convolution, stride 1, padding (1,1,1).
    Conv3d { in_c: usize, out_c: usize },
    /// Temporal aggregation: kernel (3,1,1), stride (3,1,1), no padding.
    Lta { in_c: usize, out_c: usize },
    /// Global+local convolution merged by addition.
    GlConvA { in_c: usize, out_c: usize, n_parts: usize },
    /// Global+local convolution merged by height concatenation.
    GlConvB { in_c: usize, out_c: usize, n_parts: usize },
    /// 2x2 spatial max pooling, stride 2.
    SpatialMaxPool,
}

/// Spatial feature mapping applied after temporal pooling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mapping {
    /// Max over W.
    Max,
    /// Mean over W.
    Avg,
    /// `alpha * max + beta * mean` with fixed coefficients.
    MaxPlusAvg { alpha: f64, beta: f64 },
    /// Generalized mean with a learnable exponent.
    Gem { p_init: f64, clamp_eps: f64 },
}

impl Mapping {
    pub fn gem_default() -> Self {
        let g = GemConfig::default();
        Mapping::Gem { p_init: g.p_init, clamp_eps: g.clamp_eps }
    }
}

/// Declarative model description; see [`presets`] for the shipped stacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub input_h: usize,
    pub input_w: usize,
    pub layers: Vec<LayerSpec>,
    pub mapping: Mapping,
    /// Per-strip output channels (C4).
    pub fc_out: usize,
    /// Classes of the per-strip classification head used during training.
    pub num_classes: usize,
    /// Negative slope of the post-convolution activation.
    pub leaky_slope: f64,
    /// Branch switches applied to every GLConv layer (ablations).
    #[serde(default = "default_true")]
    pub glconv_global: bool,
    #[serde(default = "default_true")]
    pub glconv_local: bool,
}

fn default_true() -> bool {
    true
}

/// Branch switches and stack edits used by the ablation studies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub n_parts: Option<usize>,
    pub mapping: Option<Mapping>,
    pub global_on: Option<bool>,
    pub local_on: Option<bool>,
    /// Downsampling pattern for the two downsampling slots:
    /// "lta-sp" (default), "sp-sp", "sp-lta" or "lta-lta".
    pub downsampling: Option<String>,
    pub num_classes: Option<usize>,
}

impl ModelOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ModelOverrides::default()
    }
}

/// Shipped architectures by name.
pub fn preset(name: &str) -> Result<ModelConfig> {
    let (layers, fc_out, num_classes) = match name {
        "casia-b" => (
            vec![
                LayerSpec::Conv3d { in_c: 1, out_c: 32 },
                LayerSpec::Lta { in_c: 32, out_c: 32 },
                LayerSpec::GlConvA { in_c: 32, out_c: 64, n_parts: 8 },
                LayerSpec::SpatialMaxPool,
                LayerSpec::GlConvA { in_c: 64, out_c: 128, n_parts: 8 },
                LayerSpec::GlConvB { in_c: 128, out_c: 128, n_parts: 8 },
            ],
            128,
            74,
        ),
        "oumvlp" => (
            vec![
                LayerSpec::Conv3d { in_c: 1, out_c: 32 },
                LayerSpec::Conv3d { in_c: 32, out_c: 32 },
                LayerSpec::Lta { in_c: 32, out_c: 32 },
                LayerSpec::GlConvA { in_c: 32, out_c: 64, n_parts: 8 },
                LayerSpec::GlConvA { in_c: 64, out_c: 64, n_parts: 8 },
                LayerSpec::SpatialMaxPool,
                LayerSpec::GlConvA { in_c: 64, out_c: 128, n_parts: 8 },
                LayerSpec::GlConvA { in_c: 128, out_c: 128, n_parts: 8 },
                LayerSpec::GlConvA { in_c: 128, out_c: 256, n_parts: 8 },
                LayerSpec::GlConvB { in_c: 256, out_c: 256, n_parts: 8 },
            ],
            256,
            5153,
        ),
        // The casia-b stack at one eighth of the channel widths; small
        // enough for CPU training and end-to-end gradient checks.
        "casia-b-tiny" => (
            vec![
                LayerSpec::Conv3d { in_c: 1, out_c: 4 },
                LayerSpec::Lta { in_c: 4, out_c: 4 },
                LayerSpec::GlConvA { in_c: 4, out_c: 8, n_parts: 8 },
                LayerSpec::SpatialMaxPool,
                LayerSpec::GlConvA { in_c: 8, out_c: 16, n_parts: 8 },
                LayerSpec::GlConvB { in_c: 16, out_c: 16, n_parts: 8 },
            ],
            16,
            8,
        ),
        other => {
            return Err(Error::config(format!(
                "unknown preset '{other}' (expected casia-b, oumvlp or casia-b-tiny)"
            )))
        }
    };
    Ok(ModelConfig {
        name: name.to_string(),
        input_h: 64,
        input_w: 44,
        layers,
        mapping: Mapping::gem_default(),
        fc_out,
        num_classes,
        leaky_slope: 0.01,
        glconv_global: true,
        glconv_local: true,
    })
}

/// Apply ablation overrides to a preset configuration.
pub fn apply_overrides(mut cfg: ModelConfig, ov: &ModelOverrides) -> Result<ModelConfig> {
    if let Some(n) = ov.n_parts {
        for layer in &mut cfg.layers {
            match layer {
                LayerSpec::GlConvA { n_parts, .. } | LayerSpec::GlConvB { n_parts, .. } => {
                    *n_parts = n
                }
                _ => {}
            }
        }
    }
    if let Some(m) = ov.mapping {
        cfg.mapping = m;
    }
    if let Some(n) = ov.num_classes {
        cfg.num_classes = n;
    }
    if let Some(on) = ov.global_on {
        cfg.glconv_global = on;
    }
    if let Some(on) = ov.local_on {
        cfg.glconv_local = on;
    }
    if let Some(pattern) = &ov.downsampling {
        cfg = apply_downsampling(cfg, pattern)?;
    }
    Ok(cfg)
}

/// Replace the two downsampling slots (the Lta layer and the pooling layer)
/// according to `pattern`. Channels are preserved: a pooling slot keeps the
/// channel count, an Lta slot maps c -> c.
fn apply_downsampling(mut cfg: ModelConfig, pattern: &str) -> Result<ModelConfig> {
    let slots: Vec<usize> = cfg
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Lta { .. } | LayerSpec::SpatialMaxPool))
        .map(|(i, _)| i)
        .collect();
    if slots.len() != 2 {
        return Err(Error::config(format!(
            "downsampling override expects exactly 2 downsampling slots, found {}",
            slots.len()
        )));
    }
    let wanted = match pattern {
        "lta-sp" => [true, false],
        "sp-sp" => [false, false],
        "sp-lta" => [false, true],
        "lta-lta" => [true, true],
        other => {
            return Err(Error::config(format!(
                "unknown downsampling pattern '{other}'"
            )))
        }
    };
    for (slot, &use_lta) in slots.iter().zip(wanted.iter()) {
        let channels = channels_before(&cfg.layers, *slot);
        cfg.layers[*slot] = if use_lta {
            LayerSpec::Lta { in_c: channels, out_c: channels }
        } else {
            LayerSpec::SpatialMaxPool
        };
    }
    Ok(cfg)
}

fn channels_before(layers: &[LayerSpec], idx: usize) -> usize {
    let mut c = 1;
    for layer in &layers[..idx] {
        match *layer {
            LayerSpec::Conv3d { out_c, .. }
            | LayerSpec::Lta { out_c, .. }
            | LayerSpec::GlConvA { out_c, .. }
            | LayerSpec::GlConvB { out_c, .. } => c = out_c,
            LayerSpec::SpatialMaxPool => {}
        }
    }
    c
}

/// One trainable tensor with its checkpoint name and weight-decay flag.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor5<T>,
    pub decay: bool,
}

enum LayerInst {
    Conv { spec: ConvSpec, w: usize, b: usize },
    Lta { cfg: LtaConfig, w: usize, b: usize },
    GlConv { cfg: GlConvConfig, global: Option<(usize, usize)>, local: Option<(usize, usize)> },
    Pool,
}

/// A built network: architecture plus its parameter store.
pub struct Network<T: Scalar> {
    cfg: ModelConfig,
    insts: Vec<LayerInst>,
    gem_p: Option<usize>,
    fc_w: usize,
    ce_w: Option<usize>,
    strips: usize,
    params: Vec<Param<T>>,
}

/// Handles produced by a forward pass: the embedding variable plus the graph
/// leaf of every parameter (aligned with [`Network::params`]).
pub struct ForwardPass {
    pub embeddings: Var,
    pub param_vars: Vec<Var>,
}

fn init_uniform<T: Scalar>(shape: Shape5, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor5<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor5::uniform(shape, -bound, bound, rng)
}

impl<T: Scalar> Network<T> {
    /// Validate `cfg` by propagating shapes, then initialize all parameters
    /// from `seed`. The classification head is created whenever
    /// `num_classes >= 2`; it is ignored outside training.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Network<T>> {
        if cfg.fc_out == 0 {
            return Err(Error::Build("fc_out must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Param<T>> = Vec::new();
        let mut insts = Vec::new();
        let push = |params: &mut Vec<Param<T>>, name: String, value: Tensor5<T>, decay: bool| {
            params.push(Param { name, value: value.with_requires_grad(true), decay });
            params.len() - 1
        };

        // Track (C, H, W); T is runtime-dependent and checked in forward.
        let mut c = 1usize;
        let mut h = cfg.input_h;
        let mut w = cfg.input_w;
        for (i, layer) in cfg.layers.iter().enumerate() {
            let fail = |msg: String| Error::Build(format!("layer {i} ({layer:?}): {msg}"));
            match *layer {
                LayerSpec::Conv3d { in_c, out_c } => {
                    if in_c != c {
                        return Err(fail(format!("expects {in_c} channels, chain has {c}")));
                    }
                    let spec = ConvSpec::same_3x3x3(in_c, out_c, 1);
                    let fan_in = in_c * 27;
                    let wi = push(&mut params, format!("layer{i:02}.conv.weight"),
                        init_uniform(spec.weight_shape(), fan_in, &mut rng), true);
                    let bi = push(&mut params, format!("layer{i:02}.conv.bias"),
                        init_uniform(spec.bias_shape(), fan_in, &mut rng), true);
                    insts.push(LayerInst::Conv { spec, w: wi, b: bi });
                    c = out_c;
                }
                LayerSpec::Lta { in_c, out_c } => {
                    if in_c != c {
                        return Err(fail(format!("expects {in_c} channels, chain has {c}")));
                    }
                    let lta = LtaConfig::new(in_c, out_c);
                    let fan_in = in_c * lta.kernel_t;
                    let wi = push(&mut params, format!("layer{i:02}.lta.weight"),
                        init_uniform(lta.conv_spec().weight_shape(), fan_in, &mut rng), true);
                    let bi = push(&mut params, format!("layer{i:02}.lta.bias"),
                        init_uniform(lta.conv_spec().bias_shape(), fan_in, &mut rng), true);
                    insts.push(LayerInst::Lta { cfg: lta, w: wi, b: bi });
                    c = out_c;
                }
                LayerSpec::GlConvA { in_c, out_c, n_parts }
                | LayerSpec::GlConvB { in_c, out_c, n_parts } => {
                    if in_c != c {
                        return Err(fail(format!("expects {in_c} channels, chain has {c}")));
                    }
                    let combine = if matches!(layer, LayerSpec::GlConvA { .. }) {
                        CombineMode::Add
                    } else {
                        CombineMode::ConcatHeight
                    };
                    let mut gl = GlConvConfig::new(in_c, out_c, n_parts, combine);
                    gl.global_on = cfg.glconv_global;
                    gl.local_on = cfg.glconv_local;
                    gl.validate(h).map_err(|e| fail(e.to_string()))?;
                    let spec = gl.conv_spec();
                    let fan_in = in_c * 27;
                    let global = gl.global_on.then(|| {
                        let wi = push(&mut params, format!("layer{i:02}.glconv.global.weight"),
                            init_uniform(spec.weight_shape(), fan_in, &mut rng), true);
                        let bi = push(&mut params, format!("layer{i:02}.glconv.global.bias"),
                            init_uniform(spec.bias_shape(), fan_in, &mut rng), true);
                        (wi, bi)
                    });
                    let local = gl.local_on.then(|| {
                        let wi = push(&mut params, format!("layer{i:02}.glconv.local.weight"),
                            init_uniform(spec.weight_shape(), fan_in, &mut rng), true);
                        let bi = push(&mut params, format!("layer{i:02}.glconv.local.bias"),
                            init_uniform(spec.bias_shape(), fan_in, &mut rng), true);
                        (wi, bi)
                    });
                    insts.push(LayerInst::GlConv { cfg: gl, global, local });
                    if combine == CombineMode::ConcatHeight {
                        h *= 2;
                    }
                    c = out_c;
                }
                LayerSpec::SpatialMaxPool => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(fail(format!("pooling needs even extents, got {h}x{w}")));
                    }
                    insts.push(LayerInst::Pool);
                    h /= 2;
                    w /= 2;
                }
            }
        }

        let strips = h;
        let gem_p = match cfg.mapping {
            Mapping::Gem { p_init, clamp_eps } => {
                if clamp_eps <= 0.0 {
                    return Err(Error::Build("gem clamp_eps must be > 0".into()));
                }
                if p_init <= 0.0 {
                    return Err(Error::Build("gem p_init must be > 0".into()));
                }
                Some(push(&mut params, "mapping.gem.p".into(),
                    Tensor5::scalar(T::from_f64(p_init)), false))
            }
            _ => None,
        };
        let fc_w = push(&mut params, "fc.weight".into(),
            init_uniform(strip_weight_shape(strips, cfg.fc_out, c), c, &mut rng), true);
        let ce_w = (cfg.num_classes >= 2).then(|| {
            push(&mut params, "ce_head.weight".into(),
                init_uniform(strip_weight_shape(strips, cfg.num_classes, cfg.fc_out), cfg.fc_out, &mut rng),
                false)
        });

        log::info!(
            "built model '{}': {} layers, {} strips, {} parameters",
            cfg.name,
            cfg.layers.len(),
            strips,
            params.iter().map(|p| p.value.len()).sum::<usize>()
        );

        Ok(Network { cfg: cfg.clone(), insts, gem_p, fc_w, ce_w, strips, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Horizontal strip count of the embedding (H2).
    pub fn strips(&self) -> usize {
        self.strips
    }

    /// Embedding channels per strip (C4).
    pub fn embedding_channels(&self) -> usize {
        self.cfg.fc_out
    }

    /// Flattened embedding length (C4 * H2).
    pub fn embedding_len(&self) -> usize {
        self.cfg.fc_out * self.strips
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn has_ce_head(&self) -> bool {
        self.ce_w.is_some()
    }

    /// Index of the classifier weight within [`Network::params`].
    pub fn ce_weight_index(&self) -> Option<usize> {
        self.ce_w
    }

    /// Register every parameter as a graph leaf.
    fn register_params(&self, g: &mut GradGraph<T>, train: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone().with_requires_grad(train)))
            .collect()
    }

    /// Run the feature extractor and mapping head. `train` controls whether
    /// parameters are registered as differentiable leaves.
    pub fn forward(&self, g: &mut GradGraph<T>, input: &Tensor5<T>, train: bool) -> Result<ForwardPass> {
        let shape = input.shape();
        if shape.c != 1 {
            return Err(Error::config(format!("expected single-channel input, got {shape}")));
        }
        if shape.h != self.cfg.input_h || shape.w != self.cfg.input_w {
            return Err(Error::config(format!(
                "expected {}x{} frames, got {}x{}",
                self.cfg.input_h, self.cfg.input_w, shape.h, shape.w
            )));
        }
        let param_vars = self.register_params(g, train);
        let slope = T::from_f64(self.cfg.leaky_slope);

        let mut x = g.constant(input.clone());
        for inst in &self.insts {
            x = match inst {
                LayerInst::Conv { spec, w, b } => {
                    let y = g.conv3d(x, param_vars[*w], Some(param_vars[*b]), spec)?;
                    g.leaky_relu(y, slope)
                }
                LayerInst::Lta { cfg, w, b } => {
                    let y = lta_forward(g, x, cfg, param_vars[*w], Some(param_vars[*b]))?;
                    g.leaky_relu(y, slope)
                }
                LayerInst::GlConv { cfg, global, local } => {
                    let weights = GlConvWeights {
                        global: global.map(|(w, b)| (param_vars[w], param_vars[b])),
                        local: local.map(|(w, b)| (param_vars[w], param_vars[b])),
                    };
                    let y = glconv_forward(g, x, cfg, &weights)?;
                    g.leaky_relu(y, slope)
                }
                LayerInst::Pool => g.spatial_max_pool(x)?,
            };
        }

        let pooled = temporal_pool(g, x);
        let mapped = match self.cfg.mapping {
            Mapping::Max => g.max_over_axis(pooled, crate::shape::Axis::W),
            Mapping::Avg => g.mean_over_axis(pooled, crate::shape::Axis::W),
            Mapping::MaxPlusAvg { alpha, beta } => {
                weighted_sum_map(g, pooled, T::from_f64(alpha), T::from_f64(beta))?
            }
            Mapping::Gem { clamp_eps, .. } => {
                let p = param_vars[self.gem_p.expect("gem mapping has a p parameter")];
                gem_pool(g, pooled, p, clamp_eps)?
            }
        };
        let embeddings = separate_fc(g, mapped, param_vars[self.fc_w])?;
        Ok(ForwardPass { embeddings, param_vars })
    }

    /// Per-strip class logits from the classification head.
    pub fn ce_logits(&self, g: &mut GradGraph<T>, pass: &ForwardPass) -> Result<Var> {
        let ce = self.ce_w.ok_or_else(|| {
            Error::config("model was built without a classification head (num_classes < 2)")
        })?;
        g.strip_linear(pass.embeddings, pass.param_vars[ce])
    }

    /// Flatten embeddings strip-major: element `h * C4 + c` of a row is
    /// channel `c` of strip `h`.
    pub fn flatten_embeddings(&self, emb: &Tensor5<T>) -> Vec<Vec<f32>> {
        let s = emb.shape();
        debug_assert_eq!(s.c, self.cfg.fc_out);
        debug_assert_eq!(s.h, self.strips);
        let mut rows = Vec::with_capacity(s.n);
        for n in 0..s.n {
            let mut row = Vec::with_capacity(s.c * s.h);
            for h in 0..s.h {
                for c in 0..s.c {
                    row.push(emb.at(n, c, 0, h, 0).as_f32());
                }
            }
            rows.push(row);
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forward_shape(cfg: &ModelConfig, t: usize) -> Shape5 {
        let net = Network::<f32>::build(cfg, 0).unwrap();
        let input = Tensor5::zeros(Shape5::new(1, 1, t, cfg.input_h, cfg.input_w));
        let mut g = GradGraph::new();
        let pass = net.forward(&mut g, &input, false).unwrap();
        g.value(pass.embeddings).shape()
    }

    #[test]
    fn casia_b_embedding_is_64_strips_by_128() {
        let cfg = preset("casia-b").unwrap();
        let s = forward_shape(&cfg, 30);
        assert_eq!(s, Shape5::new(1, 128, 1, 64, 1));
        let net = Network::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(net.embedding_len(), 8192);
    }

    #[test]
    fn oumvlp_embedding_is_64_strips_by_256() {
        let cfg = preset("oumvlp").unwrap();
        let s = forward_shape(&cfg, 30);
        assert_eq!(s, Shape5::new(1, 256, 1, 64, 1));
    }

    #[test]
    fn output_shape_is_independent_of_clip_length() {
        let cfg = preset("casia-b-tiny").unwrap();
        let s3 = forward_shape(&cfg, 3);
        let s30 = forward_shape(&cfg, 30);
        let s61 = forward_shape(&cfg, 61);
        assert_eq!(s3, s30);
        assert_eq!(s30, s61);
    }

    #[test]
    fn indivisible_parts_fail_at_build() {
        let cfg = preset("casia-b").unwrap();
        let cfg = apply_overrides(cfg, &ModelOverrides { n_parts: Some(5), ..Default::default() })
            .unwrap();
        let err = match Network::<f32>::build(&cfg, 0) {
            Err(e) => e,
            Ok(_) => panic!("expected a build error"),
        };
        assert!(matches!(err, Error::Build(_)), "{err}");
        assert!(err.to_string().contains("layer 2"), "{err}");
    }

    #[test]
    fn inconsistent_chain_names_first_bad_layer() {
        let mut cfg = preset("casia-b-tiny").unwrap();
        cfg.layers[4] = LayerSpec::GlConvA { in_c: 9, out_c: 16, n_parts: 8 };
        let err = match Network::<f32>::build(&cfg, 0) {
            Err(e) => e,
            Ok(_) => panic!("expected a build error"),
        };
        assert!(err.to_string().contains("layer 4"), "{err}");
    }

    #[test]
    fn short_clip_is_rejected_at_forward() {
        let cfg = preset("casia-b-tiny").unwrap();
        let net = Network::<f32>::build(&cfg, 0).unwrap();
        let input = Tensor5::zeros(Shape5::new(1, 1, 2, 64, 44));
        let mut g = GradGraph::new();
        assert!(matches!(
            net.forward(&mut g, &input, false),
            Err(Error::InputTooSmall { axis: 't', .. })
        ));
    }

    #[test]
    fn zero_input_yields_finite_embeddings() {
        let cfg = preset("casia-b-tiny").unwrap();
        let net = Network::<f64>::build(&cfg, 3).unwrap();
        let input = Tensor5::zeros(Shape5::new(1, 1, 3, 64, 44));
        let mut g = GradGraph::new();
        let pass = net.forward(&mut g, &input, false).unwrap();
        assert!(g.value(pass.embeddings).all_finite());
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        use rand::SeedableRng;
        let cfg = preset("casia-b-tiny").unwrap();
        let net = Network::<f32>::build(&cfg, 5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let input = Tensor5::<f32>::uniform(Shape5::new(2, 1, 6, 64, 44), 0.0, 1.0, &mut rng);
        let run = || {
            let mut g = GradGraph::new();
            let pass = net.forward(&mut g, &input, false).unwrap();
            g.value(pass.embeddings).clone()
        };
        assert!(run().bitwise_eq(&run()));
    }

    #[test]
    fn duplicated_frames_change_values_but_not_shape() {
        use rand::SeedableRng;
        let cfg = preset("casia-b-tiny").unwrap();
        let net = Network::<f64>::build(&cfg, 5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let base = Tensor5::<f64>::uniform(Shape5::new(1, 1, 6, 64, 44), 0.0, 1.0, &mut rng);
        let bs = base.shape();
        let mut doubled = Tensor5::zeros(Shape5::new(1, 1, 12, 64, 44));
        for t in 0..12 {
            for h in 0..64 {
                for w in 0..44 {
                    doubled.set(0, 0, t, h, w, base.at(0, 0, t / 2, h, w));
                }
            }
        }
        let _ = bs;
        let mut g = GradGraph::new();
        let p1 = net.forward(&mut g, &base, false).unwrap();
        let p2 = net.forward(&mut g, &doubled, false).unwrap();
        assert_eq!(g.value(p1.embeddings).shape(), g.value(p2.embeddings).shape());
        assert!(g.value(p1.embeddings).max_abs_diff(g.value(p2.embeddings)) > 1e-9);
    }

    #[test]
    fn ablation_variants_build() {
        let base = preset("casia-b-tiny").unwrap();
        let mut variants: Vec<ModelOverrides> = vec![
            ModelOverrides { local_on: Some(false), ..Default::default() },
            ModelOverrides { global_on: Some(false), ..Default::default() },
        ];
        for n in [2usize, 4, 8] {
            variants.push(ModelOverrides { n_parts: Some(n), ..Default::default() });
        }
        for pattern in ["sp-sp", "sp-lta", "lta-sp", "lta-lta"] {
            variants.push(ModelOverrides {
                downsampling: Some(pattern.into()),
                ..Default::default()
            });
        }
        for ov in variants.drain(..) {
            let cfg = apply_overrides(base.clone(), &ov).unwrap();
            Network::<f32>::build(&cfg, 0).unwrap_or_else(|e| panic!("{ov:?}: {e}"));
        }
    }
}
