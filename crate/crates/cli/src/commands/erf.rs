use clap::Args;
use serde::{Deserialize, Serialize};
use vwa_core::analysis::{erf_map, ErfModel, ErfOperator, OperatorSpec, DEFAULT_SAMPLES};
use vwa_core::attention::DEFAULT_HEADS;
use vwa_core::vwformer::VWFormerConfig;
use vwa_core::{Graph, PadMode, RescaleStrategy};

use super::{parse_pair, usage};
use crate::config::{self, Flags};
use crate::output::OutDir;
use crate::{Common, Outcome};

#[derive(Args)]
pub struct ErfArgs {
    /// short, lwa, ga, vwa:R or vwformer-stage
    #[arg(long)]
    model: Option<String>,
    /// Side of the square input map
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Query window side; defaults to size / 8
    #[arg(long)]
    window: Option<usize>,
    /// Output pixel `i,j`
    #[arg(long, value_parser = parse_pair)]
    query: Option<[usize; 2]>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    pad: Option<PadMode>,
    #[arg(long)]
    strategy: Option<RescaleStrategy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErfRun {
    pub model: String,
    pub size: usize,
    pub channels: usize,
    pub window: Option<usize>,
    pub query: [usize; 2],
    pub samples: usize,
    pub heads: usize,
    pub pad_mode: PadMode,
    pub strategy: RescaleStrategy,
}

impl Default for ErfRun {
    fn default() -> Self {
        Self {
            model: "vwa:4".into(),
            size: 32,
            channels: 64,
            window: None,
            query: [16, 16],
            samples: DEFAULT_SAMPLES,
            heads: DEFAULT_HEADS,
            pad_mode: PadMode::CopyShift,
            strategy: RescaleStrategy::PreDopePe,
        }
    }
}

pub fn run(common: &Common, args: &ErfArgs) -> anyhow::Result<Outcome> {
    let flags = Flags::default()
        .opt("model", args.model.clone())
        .opt("size", args.size)
        .opt("channels", args.channels)
        .opt("window", args.window)
        .opt("query", args.query)
        .opt("samples", args.samples)
        .opt("heads", args.heads)
        .opt("pad_mode", args.pad)
        .opt("strategy", args.strategy);
    let cfg: ErfRun = config::load(
        &ErfRun::default(),
        common.config.as_deref(),
        flags.into_map(),
        &common.set,
    )?;
    let model: ErfModel = cfg.model.parse()?;
    if cfg.samples == 0 {
        return Err(usage("samples must be >= 1"));
    }
    let window = match cfg.window {
        Some(p) => p,
        None => VWFormerConfig::window(cfg.size)?,
    };
    let spec = OperatorSpec {
        channels: cfg.channels,
        window,
        heads: cfg.heads,
        pad_mode: cfg.pad_mode,
        strategy: cfg.strategy,
        seed: common.seed,
    };
    let stem = format!("erf_{}", model.to_string().replace(':', "-"));
    let names = [format!("{stem}.pgm"), format!("{stem}.ppm"), format!("{stem}.json")];
    let out = OutDir::new(&common.out, common.force);
    out.claim(&names.iter().map(String::as_str).collect::<Vec<_>>())?;

    let op = ErfOperator::build(model, &spec)?;
    let shape = [cfg.channels, cfg.size, cfg.size];
    let query = (cfg.query[0], cfg.query[1]);
    let erf = erf_map(
        &|g: &mut Graph, x| op.apply(g, x),
        &shape,
        query,
        cfg.samples,
        common.seed,
    )?;

    out.write(&names[0], &erf.to_pgm())?;
    out.write(&names[1], &erf.to_ppm())?;
    let bbox = erf.bounding_box();
    out.write_json(
        &names[2],
        &serde_json::json!({
            "run": cfg,
            "window": window,
            "support_area": erf.support_area(),
            "bounding_box": bbox,
        }),
    )?;
    match bbox {
        Some(b) => println!(
            "{model} at ({},{}): support bounding box {b}, area {}",
            query.0,
            query.1,
            erf.support_area()
        ),
        None => println!("{model} at ({},{}): empty support", query.0, query.1),
    }
    Ok(Outcome::Ok)
}
