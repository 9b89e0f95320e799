use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vwa_core::analysis::{attention_row_dump, collapse_metric, RowIndex};
use vwa_core::attention::DEFAULT_HEADS;
use vwa_core::{AttnConfig, AttnWeights, PadMode, RescaleStrategy, Tensor};

use super::parse_pair;
use crate::config::{self, Flags};
use crate::output::OutDir;
use crate::{Common, Outcome};

#[derive(Args)]
pub struct DumpArgs {
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    pad: Option<PadMode>,
    #[arg(long)]
    strategy: Option<RescaleStrategy>,
    /// Query window `row,col` in the window grid
    #[arg(long, value_parser = parse_pair)]
    at: Option<[usize; 2]>,
    /// Query pixel `row,col` inside the window
    #[arg(long, value_parser = parse_pair)]
    query: Option<[usize; 2]>,
    #[arg(long)]
    head: Option<usize>,
    /// Zero the bias of the key maps
    #[arg(long)]
    zero_key_bias: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpRun {
    pub size: usize,
    pub channels: usize,
    pub window: usize,
    pub ratio: usize,
    pub heads: usize,
    pub pad_mode: PadMode,
    pub strategy: RescaleStrategy,
    pub at: [usize; 2],
    pub query: [usize; 2],
    pub head: usize,
    pub zero_key_bias: bool,
}

impl Default for DumpRun {
    fn default() -> Self {
        Self {
            size: 16,
            channels: 16,
            window: 4,
            ratio: 4,
            heads: DEFAULT_HEADS,
            pad_mode: PadMode::CopyShift,
            strategy: RescaleStrategy::PreDopePe,
            at: [0, 0],
            query: [0, 0],
            head: 0,
            zero_key_bias: false,
        }
    }
}

pub fn run(common: &Common, args: &DumpArgs) -> anyhow::Result<Outcome> {
    let flags = Flags::default()
        .opt("size", args.size)
        .opt("channels", args.channels)
        .opt("window", args.window)
        .opt("ratio", args.ratio)
        .opt("heads", args.heads)
        .opt("pad_mode", args.pad)
        .opt("strategy", args.strategy)
        .opt("at", args.at)
        .opt("query", args.query)
        .opt("head", args.head)
        .set("zero_key_bias", args.zero_key_bias);
    let run: DumpRun = config::load(
        &DumpRun::default(),
        common.config.as_deref(),
        flags.into_map(),
        &common.set,
    )?;
    let out = OutDir::new(&common.out, common.force);
    out.claim(&["attn_row.csv", "attn_row.json"])?;

    let cfg = AttnConfig::new(run.channels, run.window, run.ratio)
        .with_heads(run.heads)
        .with_pad(run.pad_mode)
        .with_strategy(run.strategy);
    let mut w = AttnWeights::init_seeded(common.seed, &cfg)?;
    if run.zero_key_bias {
        w.zero_key_bias();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    rng.set_stream(1);
    let x = Tensor::from_fn(&[run.channels, run.size, run.size], |_| rng.gen_range(-1.0..=1.0));
    let idx = RowIndex {
        window: (run.at[0], run.at[1]),
        query: (run.query[0], run.query[1]),
        head: run.head,
    };
    let row = attention_row_dump(&cfg, &w, &x, idx)?;

    let header = ["key", "key_row", "key_col", "weight", "padded"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = row
        .weights
        .iter()
        .zip(&row.padded)
        .enumerate()
        .map(|(k, (wt, pad))| {
            vec![
                k.to_string(),
                (k / row.key_side).to_string(),
                (k % row.key_side).to_string(),
                format!("{wt:e}"),
                u8::from(*pad).to_string(),
            ]
        })
        .collect();
    out.write_csv("attn_row.csv", &header, &rows)?;
    let metric = collapse_metric(&row.weights, &row.padded).ok();
    out.write_json("attn_row.json", &serde_json::json!({ "run": run, "collapse": metric }))?;
    match metric {
        Some(m) => println!(
            "{} keys, {} padded, {} distinct padded weights, padded entropy {:.6}",
            row.weights.len(),
            m.padded_count,
            m.distinct_count,
            m.padded_entropy
        ),
        None => println!("{} keys, none padded", row.weights.len()),
    }
    Ok(Outcome::Ok)
}
