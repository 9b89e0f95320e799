//! Global, local-window and varying-window multi-head self-attention.
//!
//! Varying window attention keeps the `P x P` query window of local window
//! attention but lets each query window attend to a centered `RP x RP`
//! context. How the context is turned into keys and values decides its cost:
//!
//! | strategy        | key/value path                                           |
//! |-----------------|----------------------------------------------------------|
//! | `NoRescale`     | linear maps on all `(RP)^2` context tokens               |
//! | `PostPe`        | unfold, then a `R x R` stride-`R` conv (`C -> C`)         |
//! | `PostAvgPool`   | unfold, `R x R` average pool, then linear maps           |
//! | `PreDopePe`     | DOPE (`C -> C/R^2`, kernel `R`, stride 1) on the map,    |
//! |                 | pad, unfold, then PE (`C/R^2 -> C`, kernel `R`, stride `R`) |
//!
//! With `PreDopePe` the unfolded context holds `HWC` elements and the layer
//! costs `5 HW C^2 + 2 HW P^2 C`, one linear map more than local attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cost::{CostConfig, CostReport, MemKind, Variant};
use crate::error::{Error, Result};
use crate::params::{prefixed, prefixed_mut, BoundConv, BoundLinear, Conv, Linear, NamedTensors};
use crate::tensor::{maps, Tensor, WindowSet};
use crate::windowing::{self, PadMode, PadSpec};

pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleStrategy {
    NoRescale,
    PostPe,
    PostAvgPool,
    #[default]
    PreDopePe,
}

impl RescaleStrategy {
    pub fn variant(self) -> Variant {
        match self {
            RescaleStrategy::NoRescale => Variant::VwaNoRescale,
            RescaleStrategy::PostPe => Variant::VwaPostPe,
            RescaleStrategy::PostAvgPool => Variant::VwaPostAvgPool,
            RescaleStrategy::PreDopePe => Variant::VwaPreDopePe,
        }
    }

    pub fn from_variant(v: Variant) -> Option<Self> {
        match v {
            Variant::VwaNoRescale => Some(RescaleStrategy::NoRescale),
            Variant::VwaPostPe => Some(RescaleStrategy::PostPe),
            Variant::VwaPostAvgPool => Some(RescaleStrategy::PostAvgPool),
            Variant::VwaPreDopePe => Some(RescaleStrategy::PreDopePe),
            _ => None,
        }
    }
}

impl std::str::FromStr for RescaleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "no-rescale" | "norescale" => Ok(RescaleStrategy::NoRescale),
            "post-pe" | "postpe" => Ok(RescaleStrategy::PostPe),
            "post-avg-pool" | "postavgpool" => Ok(RescaleStrategy::PostAvgPool),
            "pre-dope-pe" | "predopepe" => Ok(RescaleStrategy::PreDopePe),
            _ => Err(Error::Config(format!("unknown rescaling strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub channels: usize,
    pub window: usize,
    pub ratio: usize,
    pub heads: usize,
    pub pad_mode: PadMode,
    pub strategy: RescaleStrategy,
}

impl AttnConfig {
    pub fn new(channels: usize, window: usize, ratio: usize) -> Self {
        Self {
            channels,
            window,
            ratio,
            heads: DEFAULT_HEADS,
            pad_mode: PadMode::CopyShift,
            strategy: RescaleStrategy::PreDopePe,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_pad(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn with_strategy(mut self, s: RescaleStrategy) -> Self {
        self.strategy = s;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Logit scale `1 / sqrt(C / heads)`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    pub fn pad_spec(&self) -> PadSpec {
        PadSpec::new(self.pad_mode, self.window, self.ratio)
    }

    /// Channels of the DOPE output, `C / R^2`.
    pub fn reduced_channels(&self) -> usize {
        self.channels / (self.ratio * self.ratio)
    }

    pub fn validate(&self) -> Result<()> {
        let AttnConfig {
            channels: c,
            window: p,
            ratio: r,
            heads: h,
            ..
        } = *self;
        if c == 0 || p == 0 || r == 0 || h == 0 {
            return Err(Error::Config(format!("C, P, R and heads must be >= 1: {self:?}")));
        }
        if c % h != 0 {
            return Err(Error::Config(format!("C={c} not divisible by {h} heads")));
        }
        if self.strategy == RescaleStrategy::PreDopePe && c % (r * r) != 0 {
            return Err(Error::Config(format!("C={c} not divisible by R^2={}", r * r)));
        }
        Ok(())
    }
}

/// How keys and values are produced from the context.
#[derive(Debug, Clone, PartialEq)]
pub enum KeyValueMaps {
    /// Token-wise key and value maps (global/local attention, `NoRescale`,
    /// `PostAvgPool`).
    Linear { key: Linear, value: Linear },
    /// `C -> C` patch embeddings with kernel and stride `R`.
    PostPe { key: Conv, value: Conv },
    /// DOPE followed by one patch embedding each for key and value.
    PreDopePe { dope: Conv, key: Conv, value: Conv },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub query: Linear,
    pub out: Linear,
    pub kv: KeyValueMaps,
}

impl AttnWeights {
    /// Plain query/key/value/out maps, as used by global and local attention.
    pub fn init_linear(rng: &mut ChaCha8Rng, c: usize) -> Self {
        Self {
            query: Linear::init(rng, c, c),
            kv: KeyValueMaps::Linear {
                key: Linear::init(rng, c, c),
                value: Linear::init(rng, c, c),
            },
            out: Linear::init(rng, c, c),
        }
    }

    pub fn init(rng: &mut ChaCha8Rng, cfg: &AttnConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, r) = (cfg.channels, cfg.ratio);
        let query = Linear::init(rng, c, c);
        let kv = match cfg.strategy {
            RescaleStrategy::NoRescale | RescaleStrategy::PostAvgPool => KeyValueMaps::Linear {
                key: Linear::init(rng, c, c),
                value: Linear::init(rng, c, c),
            },
            RescaleStrategy::PostPe => KeyValueMaps::PostPe {
                key: Conv::init(rng, c, c, r, r),
                value: Conv::init(rng, c, c, r, r),
            },
            RescaleStrategy::PreDopePe => {
                let cr = cfg.reduced_channels();
                KeyValueMaps::PreDopePe {
                    dope: Conv::init(rng, c, cr, r, 1),
                    key: Conv::init(rng, cr, c, r, r),
                    value: Conv::init(rng, cr, c, r, r),
                }
            }
        };
        let out = Linear::init(rng, c, c);
        Ok(Self { query, out, kv })
    }

    pub fn init_seeded(seed: u64, cfg: &AttnConfig) -> Result<Self> {
        Self::init(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
    }

    /// Zeroes the bias of every map that produces keys.
    pub fn zero_key_bias(&mut self) {
        match &mut self.kv {
            KeyValueMaps::Linear { key, .. } => key.bias = Tensor::zeros(key.bias.shape()),
            KeyValueMaps::PostPe { key, .. } | KeyValueMaps::PreDopePe { key, .. } => {
                key.bias = Tensor::zeros(key.bias.shape())
            }
        }
    }

    /// Sets every bias to zero.
    pub fn zero_biases(&mut self) {
        for (name, t) in self.tensors_mut() {
            if name.ends_with(".bias") {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn strategy(&self) -> Option<RescaleStrategy> {
        match self.kv {
            KeyValueMaps::Linear { .. } => None,
            KeyValueMaps::PostPe { .. } => Some(RescaleStrategy::PostPe),
            KeyValueMaps::PreDopePe { .. } => Some(RescaleStrategy::PreDopePe),
        }
    }

    /// Shape check against a config; `Linear` maps serve `NoRescale` and
    /// `PostAvgPool`.
    pub fn validate(&self, cfg: &AttnConfig) -> Result<()> {
        cfg.validate()?;
        let (c, r) = (cfg.channels, cfg.ratio);
        let lin_ok = |l: &Linear, i: usize, o: usize| l.in_features() == i && l.out_features() == o;
        let conv_ok = |cv: &Conv, i: usize, o: usize, k: usize, s: usize| {
            cv.in_channels() == i && cv.out_channels() == o && cv.kernel() == k && cv.stride == s
        };
        let mut ok = lin_ok(&self.query, c, c) && lin_ok(&self.out, c, c);
        ok &= match (&self.kv, cfg.strategy) {
            (KeyValueMaps::Linear { key, value }, RescaleStrategy::NoRescale | RescaleStrategy::PostAvgPool) => {
                lin_ok(key, c, c) && lin_ok(value, c, c)
            }
            (KeyValueMaps::PostPe { key, value }, RescaleStrategy::PostPe) => {
                conv_ok(key, c, c, r, r) && conv_ok(value, c, c, r, r)
            }
            (KeyValueMaps::PreDopePe { dope, key, value }, RescaleStrategy::PreDopePe) => {
                let cr = cfg.reduced_channels();
                conv_ok(dope, c, cr, r, 1) && conv_ok(key, cr, c, r, r) && conv_ok(value, cr, c, r, r)
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!(
                "weights do not match {:?} with C={c} R={r}",
                cfg.strategy
            )));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> BoundAttn {
        let query = self.query.bind(g);
        let kv = match &self.kv {
            KeyValueMaps::Linear { key, value } => BoundKv::Linear {
                key: key.bind(g),
                value: value.bind(g),
            },
            KeyValueMaps::PostPe { key, value } => BoundKv::PostPe {
                key: key.bind(g),
                value: value.bind(g),
            },
            KeyValueMaps::PreDopePe { dope, key, value } => BoundKv::PreDopePe {
                dope: dope.bind(g),
                key: key.bind(g),
                value: value.bind(g),
            },
        };
        let out = self.out.bind(g);
        BoundAttn { query, kv, out }
    }
}

impl NamedTensors for AttnWeights {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("query", self.query.tensors());
        match &self.kv {
            KeyValueMaps::Linear { key, value } => {
                v.extend(prefixed("key", key.tensors()));
                v.extend(prefixed("value", value.tensors()));
            }
            KeyValueMaps::PostPe { key, value } => {
                v.extend(prefixed("pe_key", key.tensors()));
                v.extend(prefixed("pe_value", value.tensors()));
            }
            KeyValueMaps::PreDopePe { dope, key, value } => {
                v.extend(prefixed("dope", dope.tensors()));
                v.extend(prefixed("pe_key", key.tensors()));
                v.extend(prefixed("pe_value", value.tensors()));
            }
        }
        v.extend(prefixed("out", self.out.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("query", self.query.tensors_mut());
        match &mut self.kv {
            KeyValueMaps::Linear { key, value } => {
                v.extend(prefixed_mut("key", key.tensors_mut()));
                v.extend(prefixed_mut("value", value.tensors_mut()));
            }
            KeyValueMaps::PostPe { key, value } => {
                v.extend(prefixed_mut("pe_key", key.tensors_mut()));
                v.extend(prefixed_mut("pe_value", value.tensors_mut()));
            }
            KeyValueMaps::PreDopePe { dope, key, value } => {
                v.extend(prefixed_mut("dope", dope.tensors_mut()));
                v.extend(prefixed_mut("pe_key", key.tensors_mut()));
                v.extend(prefixed_mut("pe_value", value.tensors_mut()));
            }
        }
        v.extend(prefixed_mut("out", self.out.tensors_mut()));
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BoundKv {
    Linear {
        key: BoundLinear,
        value: BoundLinear,
    },
    PostPe {
        key: BoundConv,
        value: BoundConv,
    },
    PreDopePe {
        dope: BoundConv,
        key: BoundConv,
        value: BoundConv,
    },
}

/// Attention weights living on a graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundAttn {
    pub query: BoundLinear,
    pub kv: BoundKv,
    pub out: BoundLinear,
}

/// Nodes of one attention forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AttnTrace {
    /// `C x H x W` output.
    pub out: Var,
    /// Softmax weights, `(windows * heads, query tokens, key tokens)`.
    pub attn: Var,
    pub rows: usize,
    pub cols: usize,
    pub heads: usize,
}

fn split_heads(g: &mut Graph, t: Var, heads: usize) -> Result<Var> {
    let [n, tok, c] = rank3(g.shape(t))?;
    let d = c / heads;
    let t = g.reshape(t, &[n, tok, heads, d])?;
    let t = g.permute(t, &[0, 2, 1, 3])?;
    g.reshape(t, &[n * heads, tok, d])
}

fn merge_heads(g: &mut Graph, t: Var, heads: usize) -> Result<Var> {
    let [nh, tok, d] = rank3(g.shape(t))?;
    let n = nh / heads;
    let t = g.reshape(t, &[n, heads, tok, d])?;
    let t = g.permute(t, &[0, 2, 1, 3])?;
    g.reshape(t, &[n, tok, heads * d])
}

fn rank3(s: &[usize]) -> Result<[usize; 3]> {
    match *s {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Shape(format!("expected rank 3, got {s:?}"))),
    }
}

/// Scaled dot-product attention per window and head on `(N, T, C)` tokens.
/// Returns the merged `(N, Tq, C)` output and the softmax node.
pub fn attend(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let [n, tq, c] = rank3(g.shape(q))?;
    let [nk, tk, ck] = rank3(g.shape(k))?;
    if nk != n || ck != c || g.shape(v) != [n, tk, c] {
        return Err(Error::Shape(format!(
            "query {:?}, key {:?}, value {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("C={c} not divisible by {heads} heads")));
    }
    let qh = split_heads(g, q, heads)?;
    let kh = split_heads(g, k, heads)?;
    let vh = split_heads(g, v, heads)?;
    let kt = g.permute(kh, &[0, 2, 1])?;
    let logits = g.matmul(qh, kt)?;
    let logits = g.scale(logits, 1.0 / ((c / heads) as f64).sqrt());
    let attn = g.softmax(logits, 2)?;
    g.record_mem(MemKind::Attention, n * tq * tk);
    let o = g.matmul(attn, vh)?;
    Ok((merge_heads(g, o, heads)?, attn))
}

/// Windows `(N, k, k, C)` to tokens `(N, k*k, C)`.
fn tokens(g: &mut Graph, windows: Var) -> Result<Var> {
    let s = g.shape(windows).to_vec();
    g.reshape(windows, &[s[0], s[1] * s[2], s[3]])
}

/// Applies a per-window patch embedding to `(N, RP, RP, C')` contexts and
/// returns `(N, P*P, C)` tokens.
fn embed_contexts(g: &mut Graph, ctx: Var, pe: &BoundConv) -> Result<Var> {
    let chw = g.permute(ctx, &[0, 3, 1, 2])?;
    let y = pe.apply(g, chw)?;
    let y = g.permute(y, &[0, 2, 3, 1])?;
    tokens(g, y)
}

fn pool_contexts(g: &mut Graph, ctx: Var, r: usize) -> Result<Var> {
    let chw = g.permute(ctx, &[0, 3, 1, 2])?;
    let y = g.avg_pool(chw, r)?;
    let y = g.permute(y, &[0, 2, 3, 1])?;
    tokens(g, y)
}

/// DOPE: stride-1, kernel-`R` conv with a zero halo of `R - 1` (split
/// `floor((R-1)/2)` before, the rest after) so the output keeps `H x W`.
pub fn dope_var(g: &mut Graph, x: Var, dope: &BoundConv) -> Result<Var> {
    maps::chw(g.shape(x))?;
    let r = g.shape(dope.w)[2];
    let before = (r - 1) / 2;
    let after = r - 1 - before;
    let padded = if r > 1 {
        g.pad_zero(x, [before, after, before, after])?
    } else {
        x
    };
    dope.apply(g, padded)
}

/// `(before, after)` zero halo DOPE adds around the map for ratio `r`.
pub fn dope_halo(r: usize) -> (usize, usize) {
    let before = (r - 1) / 2;
    (before, r - 1 - before)
}

/// Local window attention (`P x P` windows). Weights must be plain maps.
pub fn lwa_var(g: &mut Graph, x: Var, w: &BoundAttn, p: usize, heads: usize) -> Result<AttnTrace> {
    if !matches!(w.kv, BoundKv::Linear { .. }) {
        return Err(Error::Config(
            "local window attention needs linear key/value maps".into(),
        ));
    }
    let c = maps::chw(g.shape(x))?[0];
    let cfg = AttnConfig::new(c, p, 1)
        .with_heads(heads)
        .with_strategy(RescaleStrategy::NoRescale);
    vwa_var(g, x, w, &cfg)
}

/// Varying window attention under `cfg` (which also covers local window
/// attention at `R = 1`).
pub fn vwa_var(g: &mut Graph, x: Var, w: &BoundAttn, cfg: &AttnConfig) -> Result<AttnTrace> {
    cfg.validate()?;
    let [c, h, wd] = maps::chw(g.shape(x))?;
    if c != cfg.channels {
        return Err(Error::Shape(format!("input has {c} channels, config {}", cfg.channels)));
    }
    let (p, r) = (cfg.window, cfg.ratio);
    if h % p != 0 {
        return Err(Error::geometry("height", format!("{h} not divisible by window {p}")));
    }
    if wd % p != 0 {
        return Err(Error::geometry("width", format!("{wd} not divisible by window {p}")));
    }
    let spec = cfg.pad_spec();

    let (xq, rows, cols) = g.unfold(x, p, p, 0)?;
    let xq = tokens(g, xq)?;
    let q = w.query.apply(g, xq)?;
    g.record_mem(MemKind::Linear, g.value(q).len());

    let (k, v) = match (&w.kv, cfg.strategy) {
        (BoundKv::Linear { key, value }, RescaleStrategy::NoRescale) => {
            let padded = windowing::pad_var(g, x, spec)?;
            let (ctx, _, _) = g.unfold(padded, r * p, p, 0)?;
            g.record_mem(MemKind::Context, g.value(ctx).len());
            let t = tokens(g, ctx)?;
            (key.apply(g, t)?, value.apply(g, t)?)
        }
        (BoundKv::Linear { key, value }, RescaleStrategy::PostAvgPool) => {
            let padded = windowing::pad_var(g, x, spec)?;
            let (ctx, _, _) = g.unfold(padded, r * p, p, 0)?;
            g.record_mem(MemKind::Context, g.value(ctx).len());
            let t = pool_contexts(g, ctx, r)?;
            (key.apply(g, t)?, value.apply(g, t)?)
        }
        (BoundKv::PostPe { key, value }, RescaleStrategy::PostPe) => {
            let padded = windowing::pad_var(g, x, spec)?;
            let (ctx, _, _) = g.unfold(padded, r * p, p, 0)?;
            g.record_mem(MemKind::Context, g.value(ctx).len());
            (embed_contexts(g, ctx, key)?, embed_contexts(g, ctx, value)?)
        }
        (BoundKv::PreDopePe { dope, key, value }, RescaleStrategy::PreDopePe) => {
            let reduced = dope_var(g, x, dope)?;
            let padded = windowing::pad_var(g, reduced, spec)?;
            let (ctx, _, _) = g.unfold(padded, r * p, p, 0)?;
            g.record_mem(MemKind::Context, g.value(ctx).len());
            (embed_contexts(g, ctx, key)?, embed_contexts(g, ctx, value)?)
        }
        _ => {
            return Err(Error::Config(format!(
                "key/value weights do not implement {:?}",
                cfg.strategy
            )))
        }
    };
    g.record_mem(MemKind::Linear, g.value(k).len() + g.value(v).len());

    let (o, attn) = attend(g, q, k, v, cfg.heads)?;
    let o = w.out.apply(g, o)?;
    g.record_mem(MemKind::Linear, g.value(o).len());
    let o = g.reshape(o, &[rows * cols, p, p, c])?;
    let out = g.fold(o, rows, cols)?;
    Ok(AttnTrace {
        out,
        attn,
        rows,
        cols,
        heads: cfg.heads,
    })
}

/// Multi-head attention over all `HW` tokens.
pub fn ga_var(g: &mut Graph, x: Var, w: &BoundAttn, heads: usize) -> Result<AttnTrace> {
    let BoundKv::Linear { key, value } = &w.kv else {
        return Err(Error::Config("global attention needs linear key/value maps".into()));
    };
    let [c, h, wd] = maps::chw(g.shape(x))?;
    let t = g.permute(x, &[1, 2, 0])?;
    let t = g.reshape(t, &[1, h * wd, c])?;
    g.record_mem(MemKind::Context, h * wd * c);
    let q = w.query.apply(g, t)?;
    let k = key.apply(g, t)?;
    let v = value.apply(g, t)?;
    g.record_mem(MemKind::Linear, 3 * h * wd * c);
    let (o, attn) = attend(g, q, k, v, heads)?;
    let o = w.out.apply(g, o)?;
    g.record_mem(MemKind::Linear, h * wd * c);
    let o = g.reshape(o, &[h, wd, c])?;
    let out = g.permute(o, &[2, 0, 1])?;
    Ok(AttnTrace {
        out,
        attn,
        rows: 1,
        cols: 1,
        heads,
    })
}

fn run_pure(
    x: &Tensor,
    w: &AttnWeights,
    f: impl FnOnce(&mut Graph, Var, &BoundAttn) -> Result<AttnTrace>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let bw = w.bind(&mut g);
    let trace = f(&mut g, xv, &bw)?;
    Ok(g.value(trace.out).clone())
}

pub fn ga_forward(x: &Tensor, w: &AttnWeights, heads: usize) -> Result<Tensor> {
    run_pure(x, w, |g, x, w| ga_var(g, x, w, heads))
}

pub fn lwa_forward(x: &Tensor, w: &AttnWeights, p: usize, heads: usize) -> Result<Tensor> {
    run_pure(x, w, |g, x, w| lwa_var(g, x, w, p, heads))
}

pub fn vwa_forward(x: &Tensor, w: &AttnWeights, cfg: &AttnConfig) -> Result<Tensor> {
    w.validate(cfg)?;
    run_pure(x, w, |g, x, w| vwa_var(g, x, w, cfg))
}

/// DOPE on a `C x H x W` map, producing `C/R^2 x H x W`.
pub fn dope(x: &Tensor, conv: &Conv) -> Result<Tensor> {
    let r = conv.kernel();
    let c = maps::chw(x.shape())?[0];
    if conv.stride != 1 || c % (r * r) != 0 || conv.out_channels() * r * r != c {
        return Err(Error::Config(format!(
            "DOPE must map C={c} to C/R^2 with kernel R={r} and stride 1"
        )));
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let bc = conv.bind(&mut g);
    let y = dope_var(&mut g, xv, &bc)?;
    Ok(g.value(y).clone())
}

/// Patch embedding of `RP x RP` contexts down to `P x P` windows.
pub fn pe(contexts: &WindowSet, conv: &Conv) -> Result<WindowSet> {
    let r = conv.kernel();
    if conv.stride != r || contexts.win_h != contexts.win_w || !contexts.win_h.is_multiple_of(r) {
        return Err(Error::geometry(
            "window",
            format!(
                "PE kernel/stride {r}/{} does not tile {}x{} contexts",
                conv.stride, contexts.win_h, contexts.win_w
            ),
        ));
    }
    let p = contexts.win_h / r;
    let chw = contexts.windows.permute(&[0, 3, 1, 2])?;
    let y = chw.conv2d(&conv.weight, &conv.bias, r)?.permute(&[0, 2, 3, 1])?;
    Ok(WindowSet {
        windows: y,
        rows: contexts.rows,
        cols: contexts.cols,
        win_h: p,
        win_w: p,
        stride: contexts.stride,
    })
}

/// Builds random weights and input for `variant` at `config`, runs it on a
/// fresh graph, and returns the counters.
pub fn measure_variant(
    variant: Variant,
    config: CostConfig,
    heads: usize,
    pad_mode: PadMode,
    seed: u64,
) -> Result<CostReport> {
    config.validate(variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = crate::params::uniform_init(&mut rng, &[config.c, config.h, config.w], 1);
    crate::cost::measure(variant, config, |g| {
        let xv = g.leaf(x);
        match variant {
            Variant::Ga => {
                let w = AttnWeights::init_linear(&mut rng, config.c).bind(g);
                ga_var(g, xv, &w, heads).map(|_| ())
            }
            Variant::Lwa => {
                let w = AttnWeights::init_linear(&mut rng, config.c).bind(g);
                lwa_var(g, xv, &w, config.p, heads).map(|_| ())
            }
            _ => {
                let strategy = RescaleStrategy::from_variant(variant)
                    .ok_or_else(|| Error::Config(format!("{variant} is not an attention layer")))?;
                let cfg = AttnConfig::new(config.c, config.p, config.r)
                    .with_heads(heads)
                    .with_pad(pad_mode)
                    .with_strategy(strategy);
                let w = AttnWeights::init(&mut rng, &cfg)?.bind(g);
                vwa_var(g, xv, &w, &cfg).map(|_| ())
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_input(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::params::uniform_init(&mut rng, shape, 1)
    }

    #[test]
    fn single_token_ga_is_out_of_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = AttnWeights::init_linear(&mut rng, 4);
        let x = rand_input(2, &[4, 1, 1]);
        let y = ga_forward(&x, &w, 2).unwrap();
        let KeyValueMaps::Linear { value, .. } = &w.kv else {
            unreachable!()
        };
        let tok = x.reshape(&[1, 4]).unwrap();
        let expect = tok
            .linear(&value.weight, &value.bias)
            .unwrap()
            .linear(&w.out.weight, &w.out.bias)
            .unwrap();
        assert!(y.reshape(&[1, 4]).unwrap().max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let x = Tensor::full(&[8, 8, 8], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = AttnWeights::init_linear(&mut rng, 8);
        for y in [ga_forward(&x, &w, 2).unwrap(), lwa_forward(&x, &w, 4, 2).unwrap()] {
            for c in 0..8 {
                let first = y.at(&[c, 0, 0]).unwrap();
                for i in 0..8 {
                    for j in 0..8 {
                        assert!((y.at(&[c, i, j]).unwrap() - first).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_window_lwa_equals_ga() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = AttnWeights::init_linear(&mut rng, 8);
        let x = rand_input(9, &[8, 4, 4]);
        let a = lwa_forward(&x, &w, 4, 4).unwrap();
        let b = ga_forward(&x, &w, 4).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn unit_window_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = AttnWeights::init_linear(&mut rng, 4);
        let mut g = Graph::new();
        let x = g.leaf(rand_input(11, &[4, 3, 3]));
        let bw = w.bind(&mut g);
        let t = lwa_var(&mut g, x, &bw, 1, 2).unwrap();
        assert_eq!(g.shape(t.attn), &[18, 1, 1]);
        assert!(g.value(t.attn).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dope_identity_and_shapes() {
        let x = rand_input(3, &[16, 8, 8]);
        assert_eq!(dope(&x, &Conv::identity(16)).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = dope(&x, &Conv::init(&mut rng, 16, 1, 4, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8]);
        assert_eq!(y.len() * 16, x.len());
        assert!(dope(&x, &Conv::init(&mut rng, 16, 2, 4, 1)).is_err());
    }

    #[test]
    fn pe_identity_and_shapes() {
        let x = rand_input(6, &[4, 8, 8]);
        let ctx = windowing::extract_contexts(&windowing::csp_pad(&x, 2, 1).unwrap(), 2, 1).unwrap();
        assert_eq!(pe(&ctx, &Conv::identity(4)).unwrap(), ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (p, r) = (2, 2);
        let reduced = rand_input(8, &[1, 8, 8]);
        let ctx = windowing::extract_contexts(&windowing::csp_pad(&reduced, p, r).unwrap(), p, r).unwrap();
        let y = pe(&ctx, &Conv::init(&mut rng, 1, 4, r, r)).unwrap();
        assert_eq!((y.win_h, y.win_w, y.channels()), (p, p, 4));
        assert_eq!(y.windows.len() / y.count(), p * p * 4);
        assert!(pe(&ctx, &Conv::init(&mut rng, 1, 4, 3, 3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttnConfig::new(16, 4, 8).validate().is_err());
        assert!(AttnConfig::new(12, 4, 1).with_heads(8).validate().is_err());
        assert!(AttnConfig::new(64, 4, 8).validate().is_ok());
        let cfg = AttnConfig::new(16, 2, 2).with_heads(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = AttnWeights::init_linear(&mut rng, 16);
        assert!(w.validate(&cfg).is_err());
        assert!(vwa_forward(&rand_input(1, &[16, 8, 8]), &w, &cfg).is_err());
    }

    #[test]
    fn post_pe_has_more_parameters_than_pre_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = AttnConfig::new(64, 4, 4);
        let pre = AttnWeights::init(&mut rng, &base).unwrap();
        let post = AttnWeights::init(&mut rng, &base.with_strategy(RescaleStrategy::PostPe)).unwrap();
        let pool = AttnWeights::init(&mut rng, &base.with_strategy(RescaleStrategy::PostAvgPool)).unwrap();
        assert!(post.parameter_count() > pre.parameter_count());
        assert!(pre.parameter_count() > pool.parameter_count());
    }
}
