//! The VWFormer decoder and a synthetic feature pyramid to drive it.
//!
//! Stages, with `F` at 1/8 of the image:
//!
//! 1. aggregate: upsample `f16`, `f32` to `f8`, concat, `MLP0 -> C_F` (`F`)
//! 2. multi_scale: short path plus one VWA branch per ratio, concat,
//!    `MLP1 -> C_F` (`F1`)
//! 3. lle_fuse: `MLP_low(f4)`, upsample `F1` to `f4`, concat, `MLP2` (`F2`)
//! 4. a `1 x 1` classifier to `num_classes`
//!
//! Every MLP is a per-pixel linear map and there is no normalization or
//! activation in between. Query windows follow `P = side(F) / 8`, an `8 x 8`
//! grid of windows, so the `R = 8` branch sees the whole map.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttnConfig, AttnWeights, BoundAttn, RescaleStrategy, DEFAULT_HEADS};
use crate::autodiff::{Graph, Var};
use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::params::{prefixed, prefixed_mut, BoundLinear, Linear, NamedTensors};
use crate::tensor::{maps, Tensor};
use crate::windowing::PadMode;

/// Backbone stage widths `(C4, C8, C16, C32)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelProfile {
    #[serde(rename = "swin-b")]
    SwinB,
    #[serde(rename = "mit-b0")]
    MitB0,
    #[serde(rename = "mit-b5")]
    MitB5,
    #[serde(rename = "tiny")]
    Tiny,
}

impl ChannelProfile {
    pub fn channels(self) -> [usize; 4] {
        match self {
            ChannelProfile::SwinB => [128, 256, 512, 1024],
            ChannelProfile::MitB0 => [32, 64, 160, 256],
            ChannelProfile::MitB5 => [64, 128, 320, 512],
            ChannelProfile::Tiny => [4, 8, 8, 16],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelProfile::SwinB => "swin-b",
            ChannelProfile::MitB0 => "mit-b0",
            ChannelProfile::MitB5 => "mit-b5",
            ChannelProfile::Tiny => "tiny",
        }
    }
}

impl FromStr for ChannelProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swin-b" | "swinb" => Ok(ChannelProfile::SwinB),
            "mit-b0" | "mitb0" => Ok(ChannelProfile::MitB0),
            "mit-b5" | "mitb5" => Ok(ChannelProfile::MitB5),
            "tiny" => Ok(ChannelProfile::Tiny),
            _ => Err(Error::Config(format!("unknown channel profile `{s}`"))),
        }
    }
}

/// Backbone outputs at strides 4, 8, 16 and 32 of an `H x W` image.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelFeatures {
    pub f4: Tensor,
    pub f8: Tensor,
    pub f16: Tensor,
    pub f32: Tensor,
    pub height: usize,
    pub width: usize,
}

impl MultiLevelFeatures {
    pub fn new(f4: Tensor, f8: Tensor, f16: Tensor, f32: Tensor, height: usize, width: usize) -> Result<Self> {
        let f = Self {
            f4,
            f8,
            f16,
            f32,
            height,
            width,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn levels(&self) -> [&Tensor; 4] {
        [&self.f4, &self.f8, &self.f16, &self.f32]
    }

    pub fn channels(&self) -> [usize; 4] {
        self.levels().map(|t| t.shape()[0])
    }

    pub fn validate(&self) -> Result<()> {
        check_image(self.height, self.width)?;
        for (t, s) in self.levels().into_iter().zip([4, 8, 16, 32]) {
            let [_, h, w] = maps::chw(t.shape())?;
            if h != self.height / s || w != self.width / s {
                return Err(Error::Shape(format!(
                    "stride-{s} feature is {h}x{w}, expected {}x{}",
                    self.height / s,
                    self.width / s
                )));
            }
        }
        Ok(())
    }
}

fn check_image(h: usize, w: usize) -> Result<()> {
    if h == 0 || !h.is_multiple_of(32) {
        return Err(Error::geometry(
            "height",
            format!("{h} is not a positive multiple of 32"),
        ));
    }
    if w == 0 || !w.is_multiple_of(32) {
        return Err(Error::geometry(
            "width",
            format!("{w} is not a positive multiple of 32"),
        ));
    }
    Ok(())
}

/// How synthetic features are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Independent uniform values in `[-1, 1]`.
    Random,
    /// Sum of smooth Gaussian blobs with per-channel amplitudes.
    Blobs { count: usize },
}

/// Deterministic features for an `h x w` image with stage widths `chans`
/// (see [`ChannelProfile::channels`]).
pub fn synth_features(seed: u64, h: usize, w: usize, chans: [usize; 4], mode: SynthMode) -> Result<MultiLevelFeatures> {
    check_image(h, w)?;
    if chans.contains(&0) {
        return Err(Error::Config(format!("stage widths must be >= 1, got {chans:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64)> = match mode {
        SynthMode::Random => Vec::new(),
        SynthMode::Blobs { count } => (0..count)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen_range(0.05..0.15)))
            .collect(),
    };
    let mut levels = Vec::with_capacity(4);
    for (c, s) in chans.into_iter().zip([4, 8, 16, 32]) {
        let (lh, lw) = (h / s, w / s);
        let t = match mode {
            SynthMode::Random => Tensor::from_fn(&[c, lh, lw], |_| rng.gen_range(-1.0..=1.0)),
            SynthMode::Blobs { .. } => {
                let amp: Vec<f64> = (0..c * blobs.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                Tensor::from_fn(&[c, lh, lw], |i| {
                    let y = (i[1] as f64 + 0.5) / lh as f64;
                    let x = (i[2] as f64 + 0.5) / lw as f64;
                    blobs
                        .iter()
                        .enumerate()
                        .map(|(b, &(cy, cx, sigma))| {
                            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                            amp[i[0] * blobs.len() + b] * (-d2 / (2.0 * sigma * sigma)).exp()
                        })
                        .sum()
                })
            }
        };
        levels.push(t);
    }
    let f32 = levels.pop().expect("four levels");
    let f16 = levels.pop().expect("four levels");
    let f8 = levels.pop().expect("four levels");
    let f4 = levels.pop().expect("four levels");
    MultiLevelFeatures::new(f4, f8, f16, f32, h, w)
}

fn default_scale_group() -> Vec<usize> {
    vec![2, 4, 8]
}

fn default_heads() -> usize {
    DEFAULT_HEADS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VWFormerConfig {
    /// Backbone widths `(C4, C8, C16, C32)`.
    pub in_channels: [usize; 4],
    /// `C_F`, the width of `F` and `F1`.
    pub agg_channels: usize,
    #[serde(default = "default_scale_group")]
    pub scale_group: Vec<usize>,
    pub lle_channels: usize,
    pub out_channels: usize,
    pub num_classes: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub pad_mode: PadMode,
    #[serde(default)]
    pub strategy: RescaleStrategy,
}

impl VWFormerConfig {
    pub fn standard(profile: ChannelProfile, num_classes: usize) -> Self {
        Self {
            in_channels: profile.channels(),
            agg_channels: 512,
            scale_group: default_scale_group(),
            lle_channels: 48,
            out_channels: 256,
            num_classes,
            heads: DEFAULT_HEADS,
            pad_mode: PadMode::CopyShift,
            strategy: RescaleStrategy::PreDopePe,
        }
    }

    pub fn efficient(profile: ChannelProfile, num_classes: usize) -> Self {
        Self {
            agg_channels: 128,
            lle_channels: 32,
            out_channels: 128,
            ..Self::standard(profile, num_classes)
        }
    }

    /// Small widths for gradient checks and quick runs.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            agg_channels: 64,
            lle_channels: 4,
            out_channels: 8,
            ..Self::standard(ChannelProfile::Tiny, num_classes)
        }
    }

    pub fn preset(name: &str, profile: ChannelProfile, num_classes: usize) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard(profile, num_classes)),
            "efficient" => Ok(Self::efficient(profile, num_classes)),
            "tiny" => Ok(Self::tiny(num_classes)),
            _ => Err(Error::Config(format!("unknown decoder preset `{name}`"))),
        }
    }

    pub fn concat_channels(&self) -> usize {
        (self.scale_group.len() + 1) * self.agg_channels
    }

    pub fn fuse_channels(&self) -> usize {
        self.agg_channels + self.lle_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.in_channels.iter().all(|&c| c > 0)
            && self.agg_channels > 0
            && self.lle_channels > 0
            && self.out_channels > 0
            && self.num_classes > 0
            && self.heads > 0;
        if !positive {
            return Err(Error::Config("all widths, heads and num_classes must be >= 1".into()));
        }
        for &r in &self.scale_group {
            self.branch_config(r, 1)?.validate()?;
        }
        Ok(())
    }

    /// Query window for a `side x side` map `F`.
    pub fn window(side: usize) -> Result<usize> {
        if side == 0 || !side.is_multiple_of(8) {
            return Err(Error::geometry(
                "window",
                format!("feature side {side} is not a multiple of 8"),
            ));
        }
        Ok(side / 8)
    }

    pub fn branch_config(&self, ratio: usize, window: usize) -> Result<AttnConfig> {
        if ratio == 0 {
            return Err(Error::Config("scale group ratios must be >= 1".into()));
        }
        Ok(AttnConfig::new(self.agg_channels, window, ratio)
            .with_heads(self.heads)
            .with_pad(self.pad_mode)
            .with_strategy(self.strategy))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VWFormerWeights {
    pub mlp0: Linear,
    pub short: Linear,
    pub branches: Vec<AttnWeights>,
    pub mlp1: Linear,
    pub mlp_low: Linear,
    pub mlp2: Linear,
    pub classifier: Linear,
}

impl VWFormerWeights {
    pub fn init(seed: u64, cfg: &VWFormerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c4, c8, c16, c32] = cfg.in_channels;
        let cf = cfg.agg_channels;
        let mlp0 = Linear::init(&mut rng, c8 + c16 + c32, cf);
        let short = Linear::init(&mut rng, cf, cf);
        let branches = cfg
            .scale_group
            .iter()
            .map(|&r| AttnWeights::init(&mut rng, &cfg.branch_config(r, 1)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mlp0,
            short,
            branches,
            mlp1: Linear::init(&mut rng, cfg.concat_channels(), cf),
            mlp_low: Linear::init(&mut rng, c4, cfg.lle_channels),
            mlp2: Linear::init(&mut rng, cfg.fuse_channels(), cfg.out_channels),
            classifier: Linear::init(&mut rng, cfg.out_channels, cfg.num_classes),
        })
    }

    pub fn zero_biases(&mut self) {
        for (name, t) in self.tensors_mut() {
            if name.ends_with(".bias") {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundVWFormer {
        BoundVWFormer {
            mlp0: self.mlp0.bind(g),
            short: self.short.bind(g),
            branches: self.branches.iter().map(|b| b.bind(g)).collect(),
            mlp1: self.mlp1.bind(g),
            mlp_low: self.mlp_low.bind(g),
            mlp2: self.mlp2.bind(g),
            classifier: self.classifier.bind(g),
        }
    }
}

impl NamedTensors for VWFormerWeights {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("mlp0", self.mlp0.tensors());
        v.extend(prefixed("short", self.short.tensors()));
        for (i, b) in self.branches.iter().enumerate() {
            v.extend(prefixed(&format!("branch{i}"), b.tensors()));
        }
        v.extend(prefixed("mlp1", self.mlp1.tensors()));
        v.extend(prefixed("mlp_low", self.mlp_low.tensors()));
        v.extend(prefixed("mlp2", self.mlp2.tensors()));
        v.extend(prefixed("classifier", self.classifier.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("mlp0", self.mlp0.tensors_mut());
        v.extend(prefixed_mut("short", self.short.tensors_mut()));
        for (i, b) in self.branches.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("branch{i}"), b.tensors_mut()));
        }
        v.extend(prefixed_mut("mlp1", self.mlp1.tensors_mut()));
        v.extend(prefixed_mut("mlp_low", self.mlp_low.tensors_mut()));
        v.extend(prefixed_mut("mlp2", self.mlp2.tensors_mut()));
        v.extend(prefixed_mut("classifier", self.classifier.tensors_mut()));
        v
    }
}

#[derive(Debug, Clone)]
pub struct BoundVWFormer {
    pub mlp0: BoundLinear,
    pub short: BoundLinear,
    pub branches: Vec<BoundAttn>,
    pub mlp1: BoundLinear,
    pub mlp_low: BoundLinear,
    pub mlp2: BoundLinear,
    pub classifier: BoundLinear,
}

/// Channel widths observed on the graph while decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelTrace {
    /// Stacked backbone widths entering `MLP0`.
    pub pyramid: usize,
    /// `F`
    pub aggregated: usize,
    /// Short path and branches entering `MLP1`.
    pub multi_scale_concat: usize,
    /// `F1`
    pub multi_scale: usize,
    /// `F1` and `F_low` entering `MLP2`.
    pub fuse_concat: usize,
    /// `F2`
    pub fused: usize,
    pub classes: usize,
}

impl ChannelTrace {
    /// The `F -> concat -> F1 -> concat -> F2` chain.
    pub fn flow(&self) -> [usize; 5] {
        [
            self.aggregated,
            self.multi_scale_concat,
            self.multi_scale,
            self.fuse_concat,
            self.fused,
        ]
    }
}

/// Per-pixel linear map on a `C x H x W` node.
pub fn pointwise(g: &mut Graph, x: Var, lin: &BoundLinear) -> Result<Var> {
    let [_, h, w] = maps::chw(g.shape(x))?;
    let t = g.permute(x, &[1, 2, 0])?;
    let y = lin.apply(g, t)?;
    let cout = g.shape(y)[2];
    debug_assert_eq!(g.shape(y), &[h, w, cout]);
    g.permute(y, &[2, 0, 1])
}

fn channels(g: &Graph, x: Var) -> usize {
    g.shape(x)[0]
}

/// Feature nodes on a graph.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    pub f4: Var,
    pub f8: Var,
    pub f16: Var,
    pub f32: Var,
}

impl FeatureVars {
    pub fn bind(g: &mut Graph, f: &MultiLevelFeatures) -> Self {
        Self {
            f4: g.leaf(f.f4.clone()),
            f8: g.leaf(f.f8.clone()),
            f16: g.leaf(f.f16.clone()),
            f32: g.leaf(f.f32.clone()),
        }
    }
}

pub fn aggregate_var(g: &mut Graph, f: &FeatureVars, w: &BoundVWFormer, trace: &mut ChannelTrace) -> Result<Var> {
    let [_, h, wd] = maps::chw(g.shape(f.f8))?;
    let up16 = g.bilinear_upsample(f.f16, h, wd)?;
    let up32 = g.bilinear_upsample(f.f32, h, wd)?;
    let stacked = g.concat(&[f.f8, up16, up32], 0)?;
    trace.pyramid = channels(g, stacked);
    let out = pointwise(g, stacked, &w.mlp0)?;
    trace.aggregated = channels(g, out);
    Ok(out)
}

/// The `|scale_group|` branch outputs (one per ratio) for `F`.
pub fn branch_vars(g: &mut Graph, f: Var, w: &BoundVWFormer, cfg: &VWFormerConfig) -> Result<Vec<Var>> {
    let [_, h, wd] = maps::chw(g.shape(f))?;
    let p = VWFormerConfig::window(h)?;
    if VWFormerConfig::window(wd)? != p {
        return Err(Error::geometry(
            "width",
            format!("window rule needs a square map, got {h}x{wd}"),
        ));
    }
    if cfg.scale_group.len() != w.branches.len() {
        return Err(Error::Config(format!(
            "{} ratios but {} branch weight sets",
            cfg.scale_group.len(),
            w.branches.len()
        )));
    }
    cfg.scale_group
        .iter()
        .zip(&w.branches)
        .map(|(&r, bw)| {
            let acfg = cfg.branch_config(r, p)?;
            Ok(attention::vwa_var(g, f, bw, &acfg)?.out)
        })
        .collect()
}

pub fn multi_scale_var(
    g: &mut Graph,
    f: Var,
    w: &BoundVWFormer,
    cfg: &VWFormerConfig,
    trace: &mut ChannelTrace,
) -> Result<Var> {
    let mut parts = vec![pointwise(g, f, &w.short)?];
    parts.extend(branch_vars(g, f, w, cfg)?);
    let cat = g.concat(&parts, 0)?;
    trace.multi_scale_concat = channels(g, cat);
    let out = pointwise(g, cat, &w.mlp1)?;
    trace.multi_scale = channels(g, out);
    Ok(out)
}

pub fn lle_fuse_var(g: &mut Graph, f1: Var, f4: Var, w: &BoundVWFormer, trace: &mut ChannelTrace) -> Result<Var> {
    let [_, h, wd] = maps::chw(g.shape(f4))?;
    let low = pointwise(g, f4, &w.mlp_low)?;
    let up = g.bilinear_upsample(f1, h, wd)?;
    let cat = g.concat(&[up, low], 0)?;
    trace.fuse_concat = channels(g, cat);
    let out = pointwise(g, cat, &w.mlp2)?;
    trace.fused = channels(g, out);
    Ok(out)
}

/// Nodes produced by one decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct DecoderTrace {
    pub features: FeatureVars,
    pub f: Var,
    pub f1: Var,
    pub f2: Var,
    pub logits: Var,
    pub channels: ChannelTrace,
}

pub fn forward_var(
    g: &mut Graph,
    features: &MultiLevelFeatures,
    w: &VWFormerWeights,
    cfg: &VWFormerConfig,
) -> Result<DecoderTrace> {
    cfg.validate()?;
    features.validate()?;
    if features.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "features have widths {:?}, config expects {:?}",
            features.channels(),
            cfg.in_channels
        )));
    }
    let fv = FeatureVars::bind(g, features);
    let bw = w.bind(g);
    let mut tr = ChannelTrace::default();
    let f = aggregate_var(g, &fv, &bw, &mut tr)?;
    let f1 = multi_scale_var(g, f, &bw, cfg, &mut tr)?;
    let f2 = lle_fuse_var(g, f1, fv.f4, &bw, &mut tr)?;
    let logits = pointwise(g, f2, &bw.classifier)?;
    tr.classes = channels(g, logits);
    Ok(DecoderTrace {
        features: fv,
        f,
        f1,
        f2,
        logits,
        channels: tr,
    })
}

/// Result of [`forward`]: logits plus what the pass observed.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub logits: Tensor,
    pub channels: ChannelTrace,
    pub cost: CostCounter,
}

pub fn forward(features: &MultiLevelFeatures, w: &VWFormerWeights, cfg: &VWFormerConfig) -> Result<DecoderOutput> {
    let mut g = Graph::new();
    let t = forward_var(&mut g, features, w, cfg)?;
    Ok(DecoderOutput {
        logits: g.value(t.logits).clone(),
        channels: t.channels,
        cost: g.counter().clone(),
    })
}

pub fn aggregate(features: &MultiLevelFeatures, w: &VWFormerWeights) -> Result<Tensor> {
    features.validate()?;
    let mut g = Graph::new();
    let fv = FeatureVars::bind(&mut g, features);
    let bw = w.bind(&mut g);
    let out = aggregate_var(&mut g, &fv, &bw, &mut ChannelTrace::default())?;
    Ok(g.value(out).clone())
}

pub fn multi_scale(f: &Tensor, w: &VWFormerWeights, cfg: &VWFormerConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut g = Graph::new();
    let fv = g.leaf(f.clone());
    let bw = w.bind(&mut g);
    let out = multi_scale_var(&mut g, fv, &bw, cfg, &mut ChannelTrace::default())?;
    Ok(g.value(out).clone())
}

pub fn lle_fuse(f1: &Tensor, f4: &Tensor, w: &VWFormerWeights) -> Result<Tensor> {
    let mut g = Graph::new();
    let a = g.leaf(f1.clone());
    let b = g.leaf(f4.clone());
    let bw = w.bind(&mut g);
    let out = lle_fuse_var(&mut g, a, b, &bw, &mut ChannelTrace::default())?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        assert_eq!(ChannelProfile::SwinB.channels(), [128, 256, 512, 1024]);
        assert_eq!("mit-b0".parse::<ChannelProfile>().unwrap(), ChannelProfile::MitB0);
        assert!("resnet".parse::<ChannelProfile>().is_err());
    }

    #[test]
    fn synth_is_deterministic_and_shaped() {
        let a = synth_features(3, 64, 96, ChannelProfile::MitB0.channels(), SynthMode::Random).unwrap();
        let b = synth_features(3, 64, 96, ChannelProfile::MitB0.channels(), SynthMode::Random).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.f4.shape(), &[32, 16, 24]);
        assert_eq!(a.f32.shape(), &[256, 2, 3]);
        assert!(synth_features(3, 48, 64, ChannelProfile::MitB0.channels(), SynthMode::Random).is_err());
        let c = synth_features(4, 64, 96, ChannelProfile::MitB0.channels(), SynthMode::Random).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_arithmetic() {
        let s = VWFormerConfig::standard(ChannelProfile::SwinB, 19);
        assert_eq!((s.concat_channels(), s.fuse_channels()), (2048, 560));
        let e = VWFormerConfig::efficient(ChannelProfile::MitB0, 19);
        assert_eq!((e.concat_channels(), e.fuse_channels()), (512, 160));
        let ablation = VWFormerConfig {
            scale_group: vec![2, 4],
            ..s.clone()
        };
        assert_eq!(ablation.concat_channels(), 1536);
        let bad = VWFormerConfig {
            agg_channels: 96,
            ..s.clone()
        };
        assert!(bad.validate().is_err());
        let back = VWFormerConfig::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_defaults() {
        let cfg = VWFormerConfig::from_json(
            r#"{"in_channels":[4,8,8,16],"agg_channels":64,"lle_channels":4,"out_channels":8,"num_classes":3}"#,
        )
        .unwrap();
        assert_eq!(cfg.scale_group, vec![2, 4, 8]);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.pad_mode, PadMode::CopyShift);
        assert_eq!(cfg.strategy, RescaleStrategy::PreDopePe);
    }

    #[test]
    fn window_rule() {
        assert_eq!(VWFormerConfig::window(32).unwrap(), 4);
        assert!(VWFormerConfig::window(12).is_err());
    }

    #[test]
    fn constant_features_aggregate_to_constant() {
        let cfg = VWFormerConfig::tiny(3);
        let w = VWFormerWeights::init(1, &cfg).unwrap();
        let [c4, c8, c16, c32] = cfg.in_channels;
        let (h, wd) = (64, 64);
        let f = MultiLevelFeatures::new(
            Tensor::full(&[c4, 16, 16], 0.5),
            Tensor::full(&[c8, 8, 8], 0.5),
            Tensor::full(&[c16, 4, 4], 0.5),
            Tensor::full(&[c32, 2, 2], 0.5),
            h,
            wd,
        )
        .unwrap();
        let out = aggregate(&f, &w).unwrap();
        assert_eq!(out.shape(), &[64, 8, 8]);
        for c in 0..64 {
            let v0 = out.at(&[c, 0, 0]).unwrap();
            assert!((0..64).all(|i| (out.at(&[c, i / 8, i % 8]).unwrap() - v0).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_inputs_zero_biases_give_zeros() {
        let cfg = VWFormerConfig::tiny(3);
        let mut w = VWFormerWeights::init(2, &cfg).unwrap();
        w.zero_biases();
        let f = Tensor::zeros(&[64, 16, 16]);
        assert!(multi_scale(&f, &w, &cfg).unwrap().data().iter().all(|&v| v == 0.0));
        let f4 = Tensor::zeros(&[4, 32, 32]);
        let f2 = lle_fuse(&f, &f4, &w).unwrap();
        assert_eq!(f2.shape(), &[8, 32, 32]);
        assert!(f2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_forward_shapes_and_flow() {
        let cfg = VWFormerConfig::tiny(5);
        let w = VWFormerWeights::init(7, &cfg).unwrap();
        let f = synth_features(8, 128, 128, ChannelProfile::Tiny.channels(), SynthMode::Random).unwrap();
        let out = forward(&f, &w, &cfg).unwrap();
        assert_eq!(out.logits.shape(), &[5, 32, 32]);
        assert_eq!(out.channels.flow(), [64, 256, 64, 68, 8]);
        assert_eq!(out.channels.pyramid, 32);

        let two = VWFormerConfig {
            scale_group: vec![4, 8],
            ..cfg.clone()
        };
        let w2 = VWFormerWeights::init(7, &two).unwrap();
        let out2 = forward(&f, &w2, &two).unwrap();
        assert_eq!(out2.logits.shape(), out.logits.shape());
        assert_eq!(out2.channels.multi_scale_concat, 192);
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let cfg = VWFormerConfig::tiny(5);
        let w = VWFormerWeights::init(7, &cfg).unwrap();
        let f = synth_features(8, 128, 128, ChannelProfile::MitB0.channels(), SynthMode::Random).unwrap();
        assert!(matches!(forward(&f, &w, &cfg), Err(Error::Shape(_))));
    }
}
