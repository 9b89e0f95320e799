use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use vwa_core::params::{load_weights, save_weights};
use vwa_core::vwformer::{self, synth_features, ChannelProfile, SynthMode, VWFormerConfig, VWFormerWeights};

use super::usage;
use crate::config::{self, Flags};
use crate::output::OutDir;
use crate::{Common, Outcome};

#[derive(Args)]
pub struct DemoArgs {
    /// standard, efficient or tiny
    #[arg(long)]
    preset: Option<String>,
    /// Backbone widths: swin-b, mit-b0, mit-b5 or tiny
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    /// Square image side (multiple of 32)
    #[arg(long)]
    size: Option<usize>,
    /// Draw features as `N` smooth blobs instead of noise
    #[arg(long)]
    blobs: Option<usize>,
    /// Load decoder weights from a manifest directory
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write the weights used under `<out>/weights`
    #[arg(long)]
    save_weights: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoRun {
    pub decoder: VWFormerConfig,
    pub height: usize,
    pub width: usize,
    pub synth: SynthMode,
}

impl Default for DemoRun {
    fn default() -> Self {
        Self {
            decoder: VWFormerConfig::standard(ChannelProfile::SwinB, 19),
            height: 256,
            width: 256,
            synth: SynthMode::Random,
        }
    }
}

pub fn run(common: &Common, args: &DemoArgs) -> anyhow::Result<Outcome> {
    let mut flags = Flags::default()
        .opt("height", args.size)
        .opt("width", args.size)
        .opt("synth", args.blobs.map(|count| SynthMode::Blobs { count }));
    if args.preset.is_some() || args.profile.is_some() || args.classes.is_some() {
        let profile: ChannelProfile = args.profile.as_deref().unwrap_or("swin-b").parse()?;
        let preset = args.preset.as_deref().unwrap_or("standard");
        let decoder = VWFormerConfig::preset(preset, profile, args.classes.unwrap_or(19))?;
        flags = flags.opt("decoder", Some(decoder));
    }
    let run: DemoRun = config::load(
        &DemoRun::default(),
        common.config.as_deref(),
        flags.into_map(),
        &common.set,
    )?;
    run.decoder.validate()?;

    let out = OutDir::new(&common.out, common.force);
    let mut names = vec!["logits.vwt", "demo.json"];
    if args.save_weights {
        names.push("weights");
    }
    out.claim(&names)?;

    let features = synth_features(common.seed, run.height, run.width, run.decoder.in_channels, run.synth)?;
    let side = run.height / 8;
    if run.height != run.width {
        return Err(usage("the window rule needs a square image"));
    }
    VWFormerConfig::window(side)?;

    let mut weights = VWFormerWeights::init(common.seed, &run.decoder)?;
    if let Some(dir) = &args.weights {
        load_weights(dir, &mut weights)?;
    }
    let result = vwformer::forward(&features, &weights, &run.decoder)?;
    let logits_path = out.path("logits.vwt")?;
    result.logits.save(&logits_path)?;
    if args.save_weights {
        save_weights(&out.path("weights")?, &weights)?;
    }
    out.write_json(
        "demo.json",
        &serde_json::json!({
            "run": run,
            "seed": common.seed,
            "logits_shape": result.logits.shape(),
            "channels": result.channels,
            "channel_flow": result.channels.flow(),
            "cost": result.cost,
            "total_macs": result.cost.macs_linear + result.cost.macs_attention,
        }),
    )?;
    println!(
        "logits {:?} written to {}; channel flow {:?}",
        result.logits.shape(),
        logits_path.display(),
        result.channels.flow()
    );
    Ok(Outcome::Ok)
}
