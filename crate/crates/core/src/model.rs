//! The attention-pyramid network.
//!
//! The input image is resized to each configured scale and pushed through one
//! shared backbone (three stride-2 3x3 convolutions and one dilated 3x3
//! convolution, all followed by ReLU, for an overall stride of 8). Each scale's
//! feature map goes through pyramid pooling and a 1x1 score convolution, and
//! the per-scale score maps are fused with learned scale weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{deep_supervision_loss_graph, fuse_graph, AttentionWeights, ScaleOutputs, ScaleVars};
use crate::error::{Error, Result};
use crate::graph::{ConvVars, Graph, Var};
use crate::ops::{bilinear_resize, ConvGeom, ConvParams};
use crate::spp::{spp_forward_graph, SppConfig, DEFAULT_LEVELS};
use crate::tensor::{Dims, LabelMap, Real, Tensor4};

/// Total downsampling of the backbone.
pub const BACKBONE_STRIDE: usize = 8;
/// Smallest scale factor accepted; smaller scales are known to hurt.
pub const MIN_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApnetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub scales: Vec<f64>,
    pub backbone_channels: Vec<usize>,
    pub dilation_rate: usize,
    /// `None` removes pyramid pooling (plain dilated-backbone arm).
    pub spp: Option<SppConfig>,
    /// Fuse scales with learned weights. Without it exactly one scale is allowed
    /// and its score map is the output.
    pub attention: bool,
    /// Add one cross-entropy term per scale to the loss.
    pub deep_supervision: bool,
}

impl Default for ApnetConfig {
    fn default() -> Self {
        let backbone_channels = vec![8, 16, 32];
        ApnetConfig {
            input_size: 64,
            input_channels: 1,
            num_classes: 6,
            scales: vec![1.0, 0.75, 0.5],
            spp: Some(SppConfig::new(DEFAULT_LEVELS.to_vec(), backbone_channels[2])),
            backbone_channels,
            dilation_rate: 2,
            attention: true,
            deep_supervision: true,
        }
    }
}

impl ApnetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.input_size % BACKBONE_STRIDE != 0 {
            return bad(format!("input_size {} must be a positive multiple of 8", self.input_size));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes > 254 {
            return bad(format!("num_classes {} must be in 2..=254", self.num_classes));
        }
        if self.scales.is_empty() || !self.scales.contains(&1.0) {
            return bad(format!("scales {:?} must include 1.0", self.scales));
        }
        if self.scales.iter().any(|&s| !(MIN_SCALE..=1.0).contains(&s)) {
            return bad(format!("scales {:?} must lie in [0.5, 1]", self.scales));
        }
        if self.backbone_channels.len() != 3 || self.backbone_channels.contains(&0) {
            return bad(format!(
                "backbone_channels {:?} must list three positive widths",
                self.backbone_channels
            ));
        }
        if self.dilation_rate == 0 {
            return bad("dilation_rate must be positive".into());
        }
        if !self.attention && self.scales.len() != 1 {
            return bad("a model without attention takes exactly one scale".into());
        }
        if let Some(spp) = &self.spp {
            spp.validate()?;
            if spp.in_channels != self.feature_channels() {
                return bad(format!(
                    "pyramid in_channels {} must equal the last backbone width {}",
                    spp.in_channels,
                    self.feature_channels()
                ));
            }
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone_channels[2]
    }

    pub fn head_channels(&self) -> usize {
        self.spp.as_ref().map_or(self.feature_channels(), SppConfig::out_channels)
    }

    /// Side of the resized input for one scale: nearest multiple of 8, ties up, at least 8.
    pub fn scaled_side(&self, scale: f64) -> usize {
        let units = (scale * self.input_size as f64 / BACKBONE_STRIDE as f64 + 0.5).floor() as usize;
        units.max(1) * BACKBONE_STRIDE
    }

    /// Side of the backbone feature map for one scale.
    pub fn feature_side(&self, scale: f64) -> usize {
        self.scaled_side(scale).div_ceil(BACKBONE_STRIDE)
    }

    fn backbone_geoms(&self) -> [ConvGeom; 4] {
        let down = ConvGeom::new(2, 1, 1);
        [down, down, down, ConvGeom::new(1, self.dilation_rate, self.dilation_rate)]
    }

    /// Name, dims, kind and geometry of every parameter tensor in canonical order.
    pub fn param_layout(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut conv = |name: String, out_c: usize, in_c: usize, k: usize, geom: ConvGeom| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                dims: Dims::new(out_c, in_c, k, k),
                kind: ParamKind::Weight,
                geom: Some(geom),
            });
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                dims: Dims::new(1, out_c, 1, 1),
                kind: ParamKind::Bias,
                geom: None,
            });
        };
        let c = &self.backbone_channels;
        let widths = [self.input_channels, c[0], c[1], c[2], c[2]];
        for (i, geom) in self.backbone_geoms().into_iter().enumerate() {
            conv(format!("backbone.{i}"), widths[i + 1], widths[i], 3, geom);
        }
        if let Some(spp) = &self.spp {
            for l in &spp.levels {
                conv(format!("pyramid.level{l}"), spp.reduced_channels, spp.in_channels, 1, ConvGeom::default());
            }
        }
        conv("score".into(), self.num_classes, self.head_channels(), 1, ConvGeom::default());
        if self.attention {
            specs.push(ParamSpec {
                name: "attention.logits".into(),
                dims: Dims::new(1, self.scales.len(), 1, 1),
                kind: ParamKind::AttentionLogits,
                geom: None,
            });
        }
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    AttentionLogits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Dims,
    pub kind: ParamKind,
    pub geom: Option<ConvGeom>,
}

/// All trainable state. Backbone layers are shared by every scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ApnetParams<T> {
    pub backbone: Vec<ConvParams<T>>,
    pub pyramid: Vec<ConvParams<T>>,
    pub score: ConvParams<T>,
    pub attention: Option<AttentionWeights<T>>,
}

impl<T: Real> ApnetParams<T> {
    /// He-normal weights, zero biases, zero attention logits.
    pub fn init(config: &ApnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .param_layout()
            .iter()
            .map(|spec| match spec.kind {
                ParamKind::Weight => {
                    let fan_in = (spec.dims.c * spec.dims.h * spec.dims.w) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    Tensor4::from_fn(spec.dims, |_, _, _, _| T::of(normal.sample(&mut rng)))
                }
                ParamKind::Bias | ParamKind::AttentionLogits => Tensor4::zeros(spec.dims),
            })
            .collect();
        Self::from_flat(config, tensors)
    }

    /// Rebuild from tensors in [`ApnetConfig::param_layout`] order.
    pub fn from_flat(config: &ApnetConfig, tensors: Vec<Tensor4<T>>) -> Result<Self> {
        let layout = config.param_layout();
        if tensors.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(&tensors) {
            if spec.dims != t.dims() {
                return Err(Error::Shape(format!(
                    "parameter {} should be {}, got {}",
                    spec.name,
                    spec.dims,
                    t.dims()
                )));
            }
        }
        let mut it = layout.into_iter().zip(tensors);
        let mut next_conv = || -> Result<ConvParams<T>> {
            let (spec, w) = it.next().expect("length checked");
            let (_, b) = it.next().expect("length checked");
            ConvParams::new(w, b.into_data(), spec.geom.expect("weights carry geometry"))
        };
        let backbone = (0..4).map(|_| next_conv()).collect::<Result<Vec<_>>>()?;
        let levels = config.spp.as_ref().map_or(0, |s| s.levels.len());
        let pyramid = (0..levels).map(|_| next_conv()).collect::<Result<Vec<_>>>()?;
        let score = next_conv()?;
        let attention = it.next().map(|(_, t)| AttentionWeights { logits: t.into_data() });
        Ok(ApnetParams {
            backbone,
            pyramid,
            score,
            attention,
        })
    }

    fn convs(&self) -> impl Iterator<Item = &ConvParams<T>> {
        self.backbone.iter().chain(&self.pyramid).chain(std::iter::once(&self.score))
    }

    /// Copies of every tensor in canonical order.
    pub fn to_flat(&self) -> Vec<Tensor4<T>> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.push(c.weight.clone());
            out.push(Tensor4::vector(c.bias.clone()));
        }
        if let Some(a) = &self.attention {
            out.push(Tensor4::vector(a.logits.clone()));
        }
        out
    }

    /// Mutable access to every parameter buffer in canonical order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(ParamKind, &mut [T])) {
        for c in self.backbone.iter_mut().chain(&mut self.pyramid).chain(std::iter::once(&mut self.score)) {
            f(ParamKind::Weight, c.weight.data_mut());
            f(ParamKind::Bias, &mut c.bias);
        }
        if let Some(a) = &mut self.attention {
            f(ParamKind::AttentionLogits, &mut a.logits);
        }
    }

    pub fn count(&self) -> usize {
        self.to_flat().iter().map(|t| t.dims().len()).sum()
    }

    pub fn cast<U: Real>(&self, config: &ApnetConfig) -> Result<ApnetParams<U>> {
        ApnetParams::from_flat(config, self.to_flat().iter().map(Tensor4::cast).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(Tensor4::is_finite)
    }
}

/// Parameters bound into a graph.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub backbone: Vec<ConvVars>,
    pub pyramid: Vec<ConvVars>,
    pub score: ConvVars,
    pub logits: Option<Var>,
    flat: Vec<Var>,
}

impl ModelVars {
    /// Bind leaves created in canonical order (see [`ApnetConfig::param_layout`]).
    pub fn bind(config: &ApnetConfig, vars: &[Var]) -> Result<Self> {
        let layout = config.param_layout();
        if vars.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter nodes, got {}",
                layout.len(),
                vars.len()
            )));
        }
        let mut convs = Vec::new();
        let mut logits = None;
        let mut i = 0;
        while i < layout.len() {
            match layout[i].kind {
                ParamKind::Weight => {
                    convs.push(ConvVars {
                        weight: vars[i],
                        bias: vars[i + 1],
                        geom: layout[i].geom.expect("weights carry geometry"),
                    });
                    i += 2;
                }
                ParamKind::AttentionLogits => {
                    logits = Some(vars[i]);
                    i += 1;
                }
                ParamKind::Bias => unreachable!("bias always follows its weight"),
            }
        }
        let score = convs.pop().expect("score layer present");
        let pyramid = convs.split_off(4);
        Ok(ModelVars {
            backbone: convs,
            pyramid,
            score,
            logits,
            flat: vars.to_vec(),
        })
    }

    pub fn register<T: Real>(g: &mut Graph<T>, config: &ApnetConfig, params: &ApnetParams<T>) -> Result<Self> {
        let vars: Vec<Var> = params.to_flat().into_iter().map(|t| g.param(t)).collect();
        Self::bind(config, &vars)
    }

    /// Parameter nodes in canonical order.
    pub fn flat(&self) -> &[Var] {
        &self.flat
    }
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub outputs: ScaleVars,
    pub fused: Var,
}

fn check_image(dims: Dims, config: &ApnetConfig) -> Result<()> {
    if dims.h != dims.w {
        return Err(Error::Shape(format!(
            "input must be square, got height {} and width {}",
            dims.h, dims.w
        )));
    }
    if dims.h != config.input_size {
        return Err(Error::Shape(format!(
            "input side {} does not match configured input_size {}",
            dims.h, config.input_size
        )));
    }
    if dims.c != config.input_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, model expects {}",
            dims.c, config.input_channels
        )));
    }
    Ok(())
}

/// Backbone feature map of one (already resized) image batch.
pub fn backbone_graph<T: Real>(g: &mut Graph<T>, image: Var, layers: &[ConvVars]) -> Result<Var> {
    let mut x = image;
    for layer in layers {
        let y = g.conv(x, layer)?;
        x = g.relu(y);
    }
    Ok(x)
}

pub fn forward_graph<T: Real>(g: &mut Graph<T>, image: Var, vars: &ModelVars, config: &ApnetConfig) -> Result<ForwardVars> {
    check_image(g.dims(image), config)?;
    let mut maps = Vec::with_capacity(config.scales.len());
    for &scale in &config.scales {
        let side = config.scaled_side(scale);
        let resized = g.bilinear_resize(image, side, side)?;
        let feature = backbone_graph(g, resized, &vars.backbone)?;
        let head = match &config.spp {
            Some(spp) => spp_forward_graph(g, feature, spp, &vars.pyramid)?,
            None => feature,
        };
        maps.push(g.conv(head, &vars.score)?);
    }
    let outputs = ScaleVars {
        maps,
        scales: config.scales.clone(),
    };
    let fused = match vars.logits {
        Some(logits) if config.attention => fuse_graph(g, &outputs, logits)?,
        _ => outputs.maps[0],
    };
    Ok(ForwardVars { outputs, fused })
}

/// Labels from a fused score map: bilinear upsampling to `input_size`, then
/// per-pixel argmax with ties going to the lowest class index.
pub fn predict<T: Real>(fused: &Tensor4<T>, config: &ApnetConfig) -> Result<Vec<LabelMap>> {
    let up = bilinear_resize(fused, config.input_size, config.input_size)?;
    Ok(argmax_labels(&up))
}

pub fn argmax_labels<T: Real>(scores: &Tensor4<T>) -> Vec<LabelMap> {
    let d = scores.dims();
    (0..d.n)
        .map(|n| {
            LabelMap::from_fn(d.h, d.w, |y, x| {
                let mut best = 0;
                let mut best_v = scores.at(n, 0, y, x);
                for c in 1..d.c {
                    let v = scores.at(n, c, y, x);
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                best as u8
            })
        })
        .collect()
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Apnet<T> {
    pub config: ApnetConfig,
    pub params: ApnetParams<T>,
}

/// Loss value and gradients in canonical parameter order.
#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    pub loss: T,
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> Apnet<T> {
    pub fn new(config: ApnetConfig, seed: u64) -> Result<Self> {
        let params = ApnetParams::init(&config, seed)?;
        Ok(Apnet { config, params })
    }

    pub fn from_parts(config: ApnetConfig, params: ApnetParams<T>) -> Result<Self> {
        config.validate()?;
        // round-trip through the layout to check every shape
        let params = ApnetParams::from_flat(&config, params.to_flat())?;
        Ok(Apnet { config, params })
    }

    /// Per-scale score maps and the fused map.
    pub fn forward(&self, image: &Tensor4<T>) -> Result<(ScaleOutputs<T>, Tensor4<T>)> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let vars = ModelVars::register(&mut g, &self.config, &self.params)?;
        let fv = forward_graph(&mut g, x, &vars, &self.config)?;
        let outputs = ScaleOutputs {
            score_maps: fv.outputs.maps.iter().map(|&m| g.value(m).clone()).collect(),
            scales: fv.outputs.scales.clone(),
        };
        Ok((outputs, g.value(fv.fused).clone()))
    }

    pub fn predict(&self, image: &Tensor4<T>) -> Result<Vec<LabelMap>> {
        let (_, fused) = self.forward(image)?;
        predict(&fused, &self.config)
    }

    pub fn loss_and_grads(&self, images: &Tensor4<T>, labels: &[LabelMap], ignore_label: Option<u8>) -> Result<LossAndGrads<T>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let vars = ModelVars::register(&mut g, &self.config, &self.params)?;
        let fv = forward_graph(&mut g, x, &vars, &self.config)?;
        let aux = self.config.deep_supervision;
        let loss = deep_supervision_loss_graph(&mut g, &fv.outputs, fv.fused, labels, ignore_label, aux)?;
        g.backward(loss)?;
        let grads = vars
            .flat()
            .iter()
            .map(|&v| match g.grad(v) {
                Some(gr) => gr.to_vec(),
                None => vec![T::zero(); g.dims(v).len()],
            })
            .collect();
        Ok(LossAndGrads {
            loss: g.scalar(loss),
            grads,
        })
    }

    /// Current scale weights, or `[1.0]` for a single-scale model without attention.
    pub fn scale_weights(&self) -> Vec<T> {
        self.params
            .attention
            .as_ref()
            .map_or_else(|| vec![T::one()], AttentionWeights::weights)
    }
}
