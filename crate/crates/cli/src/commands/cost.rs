use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vwa_core::attention::{measure_variant, DEFAULT_HEADS};
use vwa_core::cost::{analytic, compare, CostDiff};
use vwa_core::{CostConfig, CostReport, PadMode, Variant};

use super::usage;
use crate::config::{self, Flags};
use crate::output::OutDir;
use crate::{Common, Outcome};

#[derive(Args)]
pub struct CostArgs {
    /// Comma-separated variants (GA, LWA, VWA-NoRescale, VWA-PostPe,
    /// VWA-PostAvgPool, VWA-PreDopePe)
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Variant>,
    /// Square map sides
    #[arg(long, value_delimiter = ',')]
    hw: Vec<usize>,
    /// Channel widths
    #[arg(long, value_delimiter = ',')]
    c: Vec<usize>,
    /// Query window sides
    #[arg(long, value_delimiter = ',')]
    p: Vec<usize>,
    /// Context ratios (GA and LWA ignore them)
    #[arg(long, value_delimiter = ',')]
    r: Vec<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// zero or csp
    #[arg(long)]
    pad: Option<PadMode>,
    /// Only report counters, without closed-form columns
    #[arg(long)]
    measure_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub variants: Vec<Variant>,
    pub hw: Vec<usize>,
    pub c: Vec<usize>,
    pub p: Vec<usize>,
    pub r: Vec<usize>,
    pub heads: usize,
    pub pad_mode: PadMode,
    pub measure_only: bool,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            variants: Variant::ATTENTION.to_vec(),
            hw: vec![32],
            c: vec![64],
            p: vec![4],
            r: vec![2, 4, 8],
            heads: DEFAULT_HEADS,
            pad_mode: PadMode::CopyShift,
            measure_only: false,
        }
    }
}

impl Sweep {
    /// Valid cells in grid order. GA and LWA appear once per `(H, C, P)`
    /// with `R = 1`.
    pub fn cells(&self) -> anyhow::Result<Vec<(Variant, CostConfig)>> {
        let lists = [&self.hw, &self.c, &self.p, &self.r];
        if self.variants.is_empty() || lists.iter().any(|l| l.is_empty()) {
            return Err(usage("empty sweep grid"));
        }
        let mut out = Vec::new();
        for &v in &self.variants {
            for &hw in &self.hw {
                for &c in &self.c {
                    for &p in &self.p {
                        let ratios: &[usize] = match v {
                            Variant::Ga | Variant::Lwa => &[1],
                            _ => &self.r,
                        };
                        for &r in ratios {
                            let cfg = CostConfig::square(hw, c, p, r);
                            let ok = cfg.validate(v).is_ok() && c % self.heads == 0;
                            if ok {
                                out.push((v, cfg));
                            } else {
                                log::warn!("skipping {v} at {cfg:?}");
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(usage("no valid cell in the sweep grid"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub measured: CostReport,
    pub analytic: Option<CostReport>,
    pub diff: Option<CostDiff>,
    /// `macs_linear` over the measured LWA `macs_linear` at the same
    /// `(H, W, C, P)`.
    pub linear_ratio_vs_lwa: f64,
}

pub fn run(common: &Common, args: &CostArgs) -> anyhow::Result<Outcome> {
    let flags = Flags::default()
        .list("variants", args.variants.clone())
        .list("hw", args.hw.clone())
        .list("c", args.c.clone())
        .list("p", args.p.clone())
        .list("r", args.r.clone())
        .opt("heads", args.heads)
        .opt("pad_mode", args.pad)
        .set("measure_only", args.measure_only);
    let sweep: Sweep = config::load(
        &Sweep::default(),
        common.config.as_deref(),
        flags.into_map(),
        &common.set,
    )?;
    if sweep.heads == 0 {
        return Err(usage("heads must be >= 1"));
    }
    let cells = sweep.cells()?;
    let out = OutDir::new(&common.out, common.force);
    out.claim(&["cost.csv", "cost.json"])?;

    let rows = cells
        .par_iter()
        .map(|&(v, cfg)| row(&sweep, v, cfg, common.seed))
        .collect::<vwa_core::Result<Vec<_>>>()?;

    let mismatches = rows.iter().filter(|r| r.diff.is_some_and(|d| !d.is_zero())).count();
    let (header, table) = table(&rows, sweep.measure_only);
    out.write_csv("cost.csv", &header, &table)?;
    out.write_json(
        "cost.json",
        &serde_json::json!({ "sweep": sweep, "rows": rows, "mismatches": mismatches }),
    )?;
    println!("{} rows, {} mismatching", rows.len(), mismatches);
    Ok(if mismatches == 0 { Outcome::Ok } else { Outcome::Failed })
}

fn row(sweep: &Sweep, v: Variant, cfg: CostConfig, seed: u64) -> vwa_core::Result<Row> {
    let measured = measure_variant(v, cfg, sweep.heads, sweep.pad_mode, seed)?;
    let lwa_cfg = CostConfig { r: 1, ..cfg };
    let lwa = measure_variant(Variant::Lwa, lwa_cfg, sweep.heads, sweep.pad_mode, seed)?;
    let ratio = measured.macs_linear as f64 / lwa.macs_linear as f64;
    let (analytic, diff) = if sweep.measure_only {
        (None, None)
    } else {
        let a = analytic(v, cfg)?;
        let d = compare(&measured, &a)?;
        (Some(a), Some(d))
    };
    Ok(Row {
        measured,
        analytic,
        diff,
        linear_ratio_vs_lwa: ratio,
    })
}

const FIELDS: [&str; 5] = [
    "macs_linear",
    "macs_attention",
    "mem_linear_elems",
    "mem_context_elems",
    "mem_attn_elems",
];

fn fields(r: &CostReport) -> [String; 5] {
    [
        r.macs_linear,
        r.macs_attention,
        r.mem_linear_elems,
        r.mem_context_elems,
        r.mem_attn_elems,
    ]
    .map(|v| v.to_string())
}

fn table(rows: &[Row], measure_only: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["variant", "h", "w", "c", "p", "r"].map(String::from).to_vec();
    header.extend(FIELDS.map(String::from));
    if !measure_only {
        header.extend(FIELDS.map(|f| format!("analytic_{f}")));
        header.extend(FIELDS.map(|f| format!("diff_{f}")));
    }
    header.push("linear_ratio_vs_lwa".into());
    let body = rows
        .iter()
        .map(|row| {
            let m = &row.measured;
            let c = m.config;
            let mut rec = vec![m.variant.to_string()];
            rec.extend([c.h, c.w, c.c, c.p, c.r].map(|v| v.to_string()));
            rec.extend(fields(m));
            if let (Some(a), Some(d)) = (&row.analytic, &row.diff) {
                rec.extend(fields(a));
                rec.extend(
                    [
                        d.macs_linear,
                        d.macs_attention,
                        d.mem_linear_elems,
                        d.mem_context_elems,
                        d.mem_attn_elems,
                    ]
                    .map(|v| v.to_string()),
                );
            }
            rec.push(format!("{}", row.linear_ratio_vs_lwa));
            rec
        })
        .collect();
    (header, body)
}
