use vwa_core::params::{load_weights, save_weights};
use vwa_core::vwformer::{self, synth_features, ChannelProfile, SynthMode, VWFormerConfig, VWFormerWeights};
use vwa_core::{Graph, PadMode};

fn tiny_run(cfg: &VWFormerConfig, seed: u64, size: usize) -> vwformer::DecoderOutput {
    let f = synth_features(seed, size, size, cfg.in_channels, SynthMode::Random).unwrap();
    let w = VWFormerWeights::init(seed, cfg).unwrap();
    vwformer::forward(&f, &w, cfg).unwrap()
}

/// Multiply-accumulates of every stage at image side `size`.
fn stage_macs(cfg: &VWFormerConfig, size: usize) -> (u64, u64) {
    let [c4, c8, c16, c32] = cfg.in_channels.map(|c| c as u64);
    let cf = cfg.agg_channels as u64;
    let s = (size / 8) as u64;
    let (n8, n4) = (s * s, (size / 4 * size / 4) as u64);
    let p = s / 8;
    let branches = cfg.scale_group.len() as u64;
    // f4 skips aggregation and only enters the low-level path
    let aggregate = n8 * (c8 + c16 + c32) * cf;
    let short = n8 * cf * cf;
    let per_branch = 5 * n8 * cf * cf;
    let mlp1 = n8 * (branches + 1) * cf * cf;
    let low = n4 * c4 * cfg.lle_channels as u64;
    let fuse = n4 * (cf + cfg.lle_channels as u64) * cfg.out_channels as u64;
    let cls = n4 * (cfg.out_channels * cfg.num_classes) as u64;
    let linear = aggregate + short + branches * per_branch + mlp1 + low + fuse + cls;
    let attention = branches * 2 * n8 * p * p * cf;
    (linear, attention)
}

#[test]
fn presets_have_their_channel_flows() {
    let cases = [
        (
            VWFormerConfig::standard(ChannelProfile::MitB5, 150),
            [512, 2048, 512, 560, 256],
        ),
        (
            VWFormerConfig::efficient(ChannelProfile::MitB0, 150),
            [128, 512, 128, 160, 128],
        ),
        (VWFormerConfig::tiny(5), [64, 256, 64, 68, 8]),
    ];
    for (cfg, flow) in cases {
        let out = tiny_run(&cfg, 1, 128);
        assert_eq!(out.channels.flow(), flow);
        assert_eq!(out.logits.shape(), &[cfg.num_classes, 32, 32]);
        assert!(out.logits.is_finite());
    }
}

#[test]
fn measured_cost_is_sum_of_stages() {
    for size in [128, 256] {
        let cfg = VWFormerConfig::tiny(3);
        let out = tiny_run(&cfg, 0, size);
        let (linear, attention) = stage_macs(&cfg, size);
        assert_eq!(out.cost.macs_linear, linear, "size {size}");
        assert_eq!(out.cost.macs_attention, attention, "size {size}");
    }
}

#[test]
fn dropping_a_branch_narrows_the_concat() {
    let mut cfg = VWFormerConfig::tiny(3);
    cfg.scale_group = vec![2, 4];
    let out = tiny_run(&cfg, 2, 128);
    assert_eq!(out.channels.flow(), [64, 192, 64, 68, 8]);
    let (linear, attention) = stage_macs(&cfg, 128);
    assert_eq!((out.cost.macs_linear, out.cost.macs_attention), (linear, attention));
    let full = tiny_run(&VWFormerConfig::tiny(3), 2, 128);
    assert!(full.cost.macs_attention > out.cost.macs_attention);
}

#[test]
fn same_seed_same_logits() {
    let cfg = VWFormerConfig::tiny(4);
    let a = tiny_run(&cfg, 42, 128);
    let b = tiny_run(&cfg, 42, 128);
    let c = tiny_run(&cfg, 43, 128);
    assert_eq!(a.logits, b.logits);
    assert_ne!(a.logits, c.logits);
}

#[test]
fn padding_mode_changes_only_border_behaviour() {
    let zero = VWFormerConfig {
        pad_mode: PadMode::Zero,
        ..VWFormerConfig::tiny(2)
    };
    let csp = VWFormerConfig {
        pad_mode: PadMode::CopyShift,
        ..VWFormerConfig::tiny(2)
    };
    let a = tiny_run(&zero, 5, 128);
    let b = tiny_run(&csp, 5, 128);
    assert_eq!(a.cost, b.cost);
    assert_ne!(a.logits, b.logits);
}

#[test]
fn weights_survive_a_round_trip() {
    let cfg = VWFormerConfig::tiny(3);
    let dir = tempfile::tempdir().unwrap();
    let w = VWFormerWeights::init(8, &cfg).unwrap();
    save_weights(dir.path(), &w).unwrap();
    let mut loaded = VWFormerWeights::init(9, &cfg).unwrap();
    load_weights(dir.path(), &mut loaded).unwrap();
    let f = synth_features(8, 128, 128, cfg.in_channels, SynthMode::Blobs { count: 3 }).unwrap();
    let a = vwformer::forward(&f, &w, &cfg).unwrap();
    let b = vwformer::forward(&f, &loaded, &cfg).unwrap();
    assert_eq!(a.logits, b.logits);

    let other = VWFormerConfig {
        agg_channels: 16,
        scale_group: vec![2, 4],
        ..cfg
    };
    let mut wrong = VWFormerWeights::init(0, &other).unwrap();
    assert!(load_weights(dir.path(), &mut wrong).is_err());
}

#[test]
fn geometry_is_checked() {
    assert_eq!(VWFormerConfig::window(64).unwrap(), 8);
    assert!(VWFormerConfig::window(60).is_err());
    assert!(synth_features(0, 100, 128, [4, 8, 8, 16], SynthMode::Random).is_err());
    let cfg = VWFormerConfig::tiny(3);
    let f = synth_features(0, 128, 128, [4, 8, 8, 8], SynthMode::Random).unwrap();
    let w = VWFormerWeights::init(0, &cfg).unwrap();
    assert!(vwformer::forward(&f, &w, &cfg).is_err());
    let bad = VWFormerConfig {
        heads: 5,
        ..VWFormerConfig::tiny(3)
    };
    assert!(bad.validate().is_err());
    assert!(VWFormerConfig::preset("huge", ChannelProfile::Tiny, 3).is_err());
}

#[test]
fn config_json_round_trip() {
    let cfg = VWFormerConfig::efficient(ChannelProfile::MitB0, 19);
    let back = VWFormerConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let minimal = r#"{"in_channels":[4,8,8,16],"agg_channels":64,"lle_channels":4,"out_channels":8,"num_classes":2}"#;
    let parsed = VWFormerConfig::from_json(minimal).unwrap();
    assert_eq!(parsed.scale_group, vec![2, 4, 8]);
    assert_eq!(parsed.heads, 8);
}

#[test]
fn logits_are_differentiable_in_every_level() {
    let cfg = VWFormerConfig::tiny(2);
    let f = synth_features(3, 128, 128, cfg.in_channels, SynthMode::Random).unwrap();
    let w = VWFormerWeights::init(3, &cfg).unwrap();
    let mut g = Graph::new();
    let t = vwformer::forward_var(&mut g, &f, &w, &cfg).unwrap();
    let s = g.sum(t.logits);
    let grads = g.backward(s).unwrap();
    for v in [t.features.f4, t.features.f8, t.features.f16, t.features.f32] {
        let gv = grads.get(v).unwrap();
        assert!(gv.is_finite());
        assert!(gv.data().iter().any(|&d| d != 0.0));
    }
}
