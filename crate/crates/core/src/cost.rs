//! Closed-form compute and memory budgets for global, local and varying
//! window attention, and the runtime counters they are checked against.
//!
//! Units: one MAC is one multiply-accumulate, so a linear map over `HW`
//! tokens of width `C` costs `HW * C^2`. Bias adds, softmax, scaling and
//! pooling are not charged. Memory is counted in activation elements:
//!
//! * `mem_linear_elems`: outputs of the query, key, value and out maps,
//! * `mem_context_elems`: the unfolded key/value source (the context
//!   windows, at whatever channel width they are unfolded),
//! * `mem_attn_elems`: attention-matrix entries, counted once per
//!   query/key pair (not multiplied by the head count).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemKind {
    Linear,
    Context,
    Attention,
}

/// Per-run tallies owned by a [`Graph`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounter {
    pub macs_linear: u64,
    pub macs_attention: u64,
    pub mem_linear_elems: u64,
    pub mem_context_elems: u64,
    pub mem_attn_elems: u64,
}

impl CostCounter {
    pub fn record_mem(&mut self, kind: MemKind, elems: u64) {
        match kind {
            MemKind::Linear => self.mem_linear_elems += elems,
            MemKind::Context => self.mem_context_elems += elems,
            MemKind::Attention => self.mem_attn_elems += elems,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "LWA")]
    Lwa,
    #[serde(rename = "VWA-NoRescale")]
    VwaNoRescale,
    #[serde(rename = "VWA-PostPe")]
    VwaPostPe,
    #[serde(rename = "VWA-PostAvgPool")]
    VwaPostAvgPool,
    #[serde(rename = "VWA-PreDopePe")]
    VwaPreDopePe,
    #[serde(rename = "VWFormer")]
    VwFormer,
}

impl Variant {
    pub const ATTENTION: [Variant; 6] = [
        Variant::Ga,
        Variant::Lwa,
        Variant::VwaNoRescale,
        Variant::VwaPostPe,
        Variant::VwaPostAvgPool,
        Variant::VwaPreDopePe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ga => "GA",
            Variant::Lwa => "LWA",
            Variant::VwaNoRescale => "VWA-NoRescale",
            Variant::VwaPostPe => "VWA-PostPe",
            Variant::VwaPostAvgPool => "VWA-PostAvgPool",
            Variant::VwaPreDopePe => "VWA-PreDopePe",
            Variant::VwFormer => "VWFormer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "ga" => Variant::Ga,
            "lwa" => Variant::Lwa,
            "vwanorescale" | "norescale" => Variant::VwaNoRescale,
            "vwapostpe" | "postpe" => Variant::VwaPostPe,
            "vwapostavgpool" | "postavgpool" => Variant::VwaPostAvgPool,
            "vwapredopepe" | "predopepe" | "vwa" => Variant::VwaPreDopePe,
            "vwformer" => Variant::VwFormer,
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        })
    }
}

/// Geometry a report was computed for: `(H, W, C, P, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub p: usize,
    pub r: usize,
}

impl CostConfig {
    pub fn square(hw: usize, c: usize, p: usize, r: usize) -> Self {
        Self { h: hw, w: hw, c, p, r }
    }

    /// Checks the geometry a variant needs: windows tile the map, the
    /// context fits inside it, and DOPE's channel reduction is exact.
    pub fn validate(&self, variant: Variant) -> Result<()> {
        let CostConfig { h, w, c, p, r } = *self;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Config(format!("empty geometry {self:?}")));
        }
        match variant {
            Variant::Ga => Ok(()),
            Variant::VwFormer => Err(Error::Config("the decoder has no closed-form budget".into())),
            _ => {
                if p == 0 || r == 0 {
                    return Err(Error::Config(format!("P and R must be >= 1, got P={p} R={r}")));
                }
                if h % p != 0 || w % p != 0 {
                    return Err(Error::Config(format!("{h}x{w} not divisible by window {p}")));
                }
                if variant != Variant::Lwa && r * p > h.min(w) {
                    return Err(Error::Config(format!("context {} exceeds map {h}x{w}", r * p)));
                }
                if variant == Variant::VwaPreDopePe && c % (r * r) != 0 {
                    return Err(Error::Config(format!("C={c} not divisible by R^2={}", r * r)));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: Variant,
    pub config: CostConfig,
    pub macs_linear: u64,
    pub macs_attention: u64,
    pub mem_linear_elems: u64,
    pub mem_context_elems: u64,
    pub mem_attn_elems: u64,
}

impl CostReport {
    pub fn from_counter(variant: Variant, config: CostConfig, c: &CostCounter) -> Self {
        Self {
            variant,
            config,
            macs_linear: c.macs_linear,
            macs_attention: c.macs_attention,
            mem_linear_elems: c.mem_linear_elems,
            mem_context_elems: c.mem_context_elems,
            mem_attn_elems: c.mem_attn_elems,
        }
    }

    pub fn total_macs(&self) -> u64 {
        self.macs_linear + self.macs_attention
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Exact closed-form budget of one attention layer.
pub fn analytic(variant: Variant, config: CostConfig) -> Result<CostReport> {
    config.validate(variant)?;
    let CostConfig { h, w, c, p, r } = config;
    let (hw, c, p2, r2) = ((h * w) as u64, c as u64, (p * p) as u64, (r * r) as u64);
    let map = hw * c * c;
    let (macs_linear, macs_attention, mem_linear, mem_context, mem_attn) = match variant {
        Variant::Ga => (4 * map, 2 * hw * hw * c, 4 * hw * c, hw * c, hw * hw),
        Variant::Lwa => (4 * map, 2 * hw * p2 * c, 4 * hw * c, hw * c, hw * p2),
        Variant::VwaNoRescale => (
            2 * (r2 + 1) * map,
            2 * hw * r2 * p2 * c,
            (2 * r2 + 2) * hw * c,
            r2 * hw * c,
            hw * r2 * p2,
        ),
        Variant::VwaPostPe => (2 * (r2 + 1) * map, 2 * hw * p2 * c, 4 * hw * c, r2 * hw * c, hw * p2),
        Variant::VwaPostAvgPool => (4 * map, 2 * hw * p2 * c, 4 * hw * c, r2 * hw * c, hw * p2),
        Variant::VwaPreDopePe => (5 * map, 2 * hw * p2 * c, 4 * hw * c, hw * c, hw * p2),
        Variant::VwFormer => unreachable!("rejected by validate"),
    };
    Ok(CostReport {
        variant,
        config,
        macs_linear,
        macs_attention,
        mem_linear_elems: mem_linear,
        mem_context_elems: mem_context,
        mem_attn_elems: mem_attn,
    })
}

/// Runs `run` on a fresh graph and reports what its counters accumulated.
pub fn measure<T>(
    variant: Variant,
    config: CostConfig,
    run: impl FnOnce(&mut Graph) -> Result<T>,
) -> Result<CostReport> {
    let mut g = Graph::new();
    run(&mut g)?;
    Ok(CostReport::from_counter(variant, config, g.counter()))
}

/// Field-wise `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostDiff {
    pub macs_linear: i128,
    pub macs_attention: i128,
    pub mem_linear_elems: i128,
    pub mem_context_elems: i128,
    pub mem_attn_elems: i128,
}

impl CostDiff {
    pub fn is_zero(&self) -> bool {
        *self == CostDiff::default()
    }

    pub fn total_macs(&self) -> i128 {
        self.macs_linear + self.macs_attention
    }
}

pub fn compare(a: &CostReport, b: &CostReport) -> Result<CostDiff> {
    if a.config != b.config {
        return Err(Error::Contract(format!(
            "cannot compare reports for {:?} and {:?}",
            a.config, b.config
        )));
    }
    let d = |x: u64, y: u64| x as i128 - y as i128;
    Ok(CostDiff {
        macs_linear: d(a.macs_linear, b.macs_linear),
        macs_attention: d(a.macs_attention, b.macs_attention),
        mem_linear_elems: d(a.mem_linear_elems, b.mem_linear_elems),
        mem_context_elems: d(a.mem_context_elems, b.mem_context_elems),
        mem_attn_elems: d(a.mem_attn_elems, b.mem_attn_elems),
    })
}
