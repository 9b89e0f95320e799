//! Effective receptive fields, attention-row dumps and a collapse metric.
//!
//! The ERF of an operator at output pixel `(i, j)` is `|d s / d x|` where `s`
//! is the sum over output channels at `(i, j)`, summed over input channels,
//! averaged over random inputs and scaled so the largest entry is 1.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttnConfig, AttnWeights, RescaleStrategy};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::Linear;
use crate::tensor::{maps, Tensor};
use crate::vwformer::{self, VWFormerConfig, VWFormerWeights};
use crate::windowing::{self, PadMode};

pub const DEFAULT_SAMPLES: usize = 16;

/// Normalized ERF heatmap, shape `1 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    pub grid: Tensor,
    pub query: (usize, usize),
    pub samples: usize,
}

/// Inclusive pixel rectangle `(top, left)-(bottom, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.bottom - self.top + 1) * (self.right - self.left + 1)
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})-({},{})", self.top, self.left, self.bottom, self.right)
    }
}

impl ErfMap {
    pub fn height(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[2]
    }

    /// Pixels with a nonzero response, row-major.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.support_above(0.0)
    }

    pub fn support_above(&self, tol: f64) -> Vec<(usize, usize)> {
        let w = self.width();
        self.grid
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > tol)
            .map(|(k, _)| (k / w, k % w))
            .collect()
    }

    pub fn support_area(&self) -> usize {
        self.support().len()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let s = self.support();
        let first = s.first()?;
        let mut b = BoundingBox {
            top: first.0,
            left: first.1,
            bottom: first.0,
            right: first.1,
        };
        for &(i, j) in &s {
            b.top = b.top.min(i);
            b.bottom = b.bottom.max(i);
            b.left = b.left.min(j);
            b.right = b.right.max(j);
        }
        Some(b)
    }

    /// Binary greyscale PGM (`P5`), white = strongest response.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend(self.grid.data().iter().map(|&v| to_byte(v)));
        out
    }

    /// Binary colour PPM (`P6`) through a blue-green-yellow-red ramp.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        for &v in self.grid.data() {
            out.extend(colormap(v));
        }
        out
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

const RAMP: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 0.3]),
    (0.25, [0.0, 0.3, 1.0]),
    (0.5, [0.0, 0.9, 0.5]),
    (0.75, [1.0, 0.9, 0.0]),
    (1.0, [0.8, 0.0, 0.0]),
];

fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let k = RAMP.windows(2).position(|s| v <= s[1].0).unwrap_or(RAMP.len() - 2);
    let ((t0, c0), (t1, c1)) = (RAMP[k], RAMP[k + 1]);
    let l = (v - t0) / (t1 - t0);
    [0, 1, 2].map(|i| to_byte(c0[i] + l * (c1[i] - c0[i])))
}

/// Raw input-gradient magnitude `sum_c |d s / d x[c]|` for one input.
pub fn erf_gradient<F>(model: &F, x: &Tensor, query: (usize, usize)) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let [c, h, w] = maps::chw(x.shape())?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = model(&mut g, xv)?;
    let s = query_scalar(&mut g, y, query)?;
    let grads = g.backward(s)?;
    let gx = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&gx.data()[ch * h * w..(ch + 1) * h * w]) {
            *o += v.abs();
        }
    }
    Tensor::new(vec![1, h, w], out)
}

/// `sum_c y[c, i, j]` as a scalar node.
pub fn query_scalar(g: &mut Graph, y: Var, (i, j): (usize, usize)) -> Result<Var> {
    let [_, h, w] = maps::chw(g.shape(y))?;
    if i >= h || j >= w {
        return Err(Error::Index(format!("query ({i},{j}) outside {h}x{w} output")));
    }
    let row = g.slice(y, 1, i, i + 1)?;
    let px = g.slice(row, 2, j, j + 1)?;
    Ok(g.sum(px))
}

/// ERF over caller-supplied inputs.
pub fn erf_map_inputs<F>(model: &F, inputs: &[Tensor], query: (usize, usize)) -> Result<ErfMap>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    if inputs.is_empty() {
        return Err(Error::Contract("ERF needs at least one input".into()));
    }
    let per: Vec<Tensor> = inputs
        .par_iter()
        .map(|x| erf_gradient(model, x, query))
        .collect::<Result<_>>()?;
    let mut acc = Tensor::zeros(per[0].shape());
    for t in &per {
        acc = acc.add(t)?;
    }
    let n = inputs.len() as f64;
    let mean = acc.map(|v| v / n);
    let max = mean.data().iter().copied().fold(0.0, f64::max);
    let grid = if max > 0.0 { mean.map(|v| v / max) } else { mean };
    Ok(ErfMap {
        grid,
        query,
        samples: inputs.len(),
    })
}

/// Uniform `[-1, 1]` inputs, one ChaCha stream per sample.
pub fn random_inputs(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0))
        })
        .collect()
}

pub fn erf_map<F>(
    model: &F,
    input_shape: &[usize],
    query: (usize, usize),
    n_samples: usize,
    seed: u64,
) -> Result<ErfMap>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    maps::chw(input_shape)?;
    erf_map_inputs(model, &random_inputs(input_shape, n_samples, seed), query)
}

/// Operators the ERF tools know how to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErfModel {
    /// The short path, a per-pixel linear map.
    Short,
    Lwa,
    Ga,
    Vwa(usize),
    /// Short path, the VWA branches and `MLP1` of the decoder.
    VwformerStage,
}

impl FromStr for ErfModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(ErfModel::Short),
            "lwa" => Ok(ErfModel::Lwa),
            "ga" => Ok(ErfModel::Ga),
            "vwformer-stage" => Ok(ErfModel::VwformerStage),
            _ => match s.strip_prefix("vwa:").map(str::parse::<usize>) {
                Some(Ok(r)) if r >= 1 => Ok(ErfModel::Vwa(r)),
                _ => Err(Error::Config(format!(
                    "unknown model `{s}` (expected short, lwa, ga, vwa:R or vwformer-stage)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for ErfModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErfModel::Short => f.write_str("short"),
            ErfModel::Lwa => f.write_str("lwa"),
            ErfModel::Ga => f.write_str("ga"),
            ErfModel::Vwa(r) => write!(f, "vwa:{r}"),
            ErfModel::VwformerStage => f.write_str("vwformer-stage"),
        }
    }
}

/// Settings shared by [`ErfOperator::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorSpec {
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    pub pad_mode: PadMode,
    pub strategy: RescaleStrategy,
    pub seed: u64,
}

/// A single operator with frozen random weights.
#[derive(Debug, Clone)]
pub enum ErfOperator {
    Short(Linear),
    Lwa {
        w: AttnWeights,
        window: usize,
        heads: usize,
    },
    Ga {
        w: AttnWeights,
        heads: usize,
    },
    Vwa {
        w: AttnWeights,
        cfg: AttnConfig,
    },
    Stage {
        w: VWFormerWeights,
        cfg: VWFormerConfig,
    },
}

impl ErfOperator {
    pub fn build(model: ErfModel, spec: &OperatorSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let c = spec.channels;
        Ok(match model {
            ErfModel::Short => ErfOperator::Short(Linear::init(&mut rng, c, c)),
            ErfModel::Lwa => ErfOperator::Lwa {
                w: AttnWeights::init_linear(&mut rng, c),
                window: spec.window,
                heads: spec.heads,
            },
            ErfModel::Ga => ErfOperator::Ga {
                w: AttnWeights::init_linear(&mut rng, c),
                heads: spec.heads,
            },
            ErfModel::Vwa(r) => {
                let cfg = AttnConfig::new(c, spec.window, r)
                    .with_heads(spec.heads)
                    .with_pad(spec.pad_mode)
                    .with_strategy(spec.strategy);
                ErfOperator::Vwa {
                    w: AttnWeights::init(&mut rng, &cfg)?,
                    cfg,
                }
            }
            ErfModel::VwformerStage => {
                let cfg = VWFormerConfig {
                    agg_channels: c,
                    heads: spec.heads,
                    pad_mode: spec.pad_mode,
                    strategy: spec.strategy,
                    ..VWFormerConfig::tiny(1)
                };
                ErfOperator::Stage {
                    w: VWFormerWeights::init(spec.seed, &cfg)?,
                    cfg,
                }
            }
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            ErfOperator::Short(l) => {
                let b = l.bind(g);
                vwformer::pointwise(g, x, &b)
            }
            ErfOperator::Lwa { w, window, heads } => {
                let b = w.bind(g);
                Ok(attention::lwa_var(g, x, &b, *window, *heads)?.out)
            }
            ErfOperator::Ga { w, heads } => {
                let b = w.bind(g);
                Ok(attention::ga_var(g, x, &b, *heads)?.out)
            }
            ErfOperator::Vwa { w, cfg } => {
                let b = w.bind(g);
                Ok(attention::vwa_var(g, x, &b, cfg)?.out)
            }
            ErfOperator::Stage { w, cfg } => {
                let b = w.bind(g);
                let mut tr = vwformer::ChannelTrace::default();
                vwformer::multi_scale_var(g, x, &b, cfg, &mut tr)
            }
        }
    }
}

/// Which key of an attention row to dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIndex {
    /// Query window `(row, col)` in the window grid.
    pub window: (usize, usize),
    /// Query pixel `(row, col)` inside its `P x P` window.
    pub query: (usize, usize),
    pub head: usize,
}

/// One softmax row with the keys that come entirely from padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnRow {
    pub weights: Vec<f64>,
    pub padded: Vec<bool>,
    /// Side of the square key grid.
    pub key_side: usize,
}

/// Softmax row of one query. A key counts as padded when its whole source
/// patch in the padded context (`R x R` for the rescaling strategies, one
/// pixel for `NoRescale`) lies outside the map.
pub fn attention_row_dump(cfg: &AttnConfig, weights: &AttnWeights, x: &Tensor, idx: RowIndex) -> Result<AttnRow> {
    weights.validate(cfg)?;
    let [_, h, w] = maps::chw(x.shape())?;
    let (p, r) = (cfg.window, cfg.ratio);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let bw = weights.bind(&mut g);
    let trace = attention::vwa_var(&mut g, xv, &bw, cfg)?;
    let RowIndex {
        window: (wi, wj),
        query: (qi, qj),
        head,
    } = idx;
    if wi >= trace.rows || wj >= trace.cols {
        return Err(Error::Index(format!(
            "window ({wi},{wj}) outside {}x{} grid",
            trace.rows, trace.cols
        )));
    }
    if qi >= p || qj >= p {
        return Err(Error::Index(format!("query ({qi},{qj}) outside {p}x{p} window")));
    }
    if head >= cfg.heads {
        return Err(Error::Index(format!("head {head} of {}", cfg.heads)));
    }
    let attn = g.value(trace.attn);
    let [_, tq, tk] = [attn.shape()[0], attn.shape()[1], attn.shape()[2]];
    let n = (wi * trace.cols + wj) * cfg.heads + head;
    let q = qi * p + qj;
    let start = (n * tq + q) * tk;
    let weights_row = attn.data()[start..start + tk].to_vec();

    let key_side = (tk as f64).sqrt().round() as usize;
    let patch = if cfg.strategy == RescaleStrategy::NoRescale {
        1
    } else {
        r
    };
    let m = windowing::margin(p, r)?;
    let outside = |lo: usize, n: usize| lo + patch <= m || lo >= m + n;
    let padded = (0..tk)
        .map(|t| {
            let (ki, kj) = (t / key_side, t % key_side);
            let top = wi * p + ki * patch;
            let left = wj * p + kj * patch;
            outside(top, h) || outside(left, w)
        })
        .collect();
    Ok(AttnRow {
        weights: weights_row,
        padded,
        key_side,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetric {
    pub padded_count: usize,
    /// Distinct padded weights after rounding to 12 decimals.
    pub distinct_count: usize,
    /// Entropy of the padded weights renormalized to sum 1.
    pub padded_entropy: f64,
}

pub fn collapse_metric(row: &[f64], mask: &[bool]) -> Result<CollapseMetric> {
    if row.len() != mask.len() {
        return Err(Error::Contract(format!(
            "row has {} weights but mask has {} entries",
            row.len(),
            mask.len()
        )));
    }
    let padded: Vec<f64> = row.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if padded.is_empty() {
        return Err(Error::Contract("no padded positions in mask".into()));
    }
    let distinct: BTreeSet<i64> = padded.iter().map(|v| (v * 1e12).round() as i64).collect();
    let total: f64 = padded.iter().sum();
    let entropy = if total > 0.0 {
        -padded
            .iter()
            .map(|v| v / total)
            .filter(|&q| q > 0.0)
            .map(|q| q * q.ln())
            .sum::<f64>()
    } else {
        0.0
    };
    Ok(CollapseMetric {
        padded_count: padded.len(),
        distinct_count: distinct.len(),
        padded_entropy: entropy,
    })
}
