//! Invariant suites behind `vwa check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use vwa_core::analysis::{attention_row_dump, collapse_metric, RowIndex};
use vwa_core::attention::{self, KeyValueMaps};
use vwa_core::autodiff::{finite_diff_at, max_rel_error};
use vwa_core::params::Conv;
use vwa_core::vwformer::{self, synth_features, ChannelProfile, SynthMode, VWFormerConfig, VWFormerWeights};
use vwa_core::{AttnConfig, AttnWeights, Graph, PadMode, Result, Tensor, Var};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0))
}

/// VWA weights that reproduce `lwa` at `R = 1`: identity DOPE and the LWA
/// key/value maps as `1 x 1` patch embeddings.
pub fn unit_ratio_weights(lwa: &AttnWeights) -> AttnWeights {
    let KeyValueMaps::Linear { key, value } = &lwa.kv else {
        panic!("local attention weights use linear key/value maps");
    };
    let c = lwa.query.in_features();
    AttnWeights {
        query: lwa.query.clone(),
        out: lwa.out.clone(),
        kv: KeyValueMaps::PreDopePe {
            dope: Conv::identity(c),
            key: key.to_conv(),
            value: value.to_conv(),
        },
    }
}

pub fn equivalence(seed: u64) -> Result<CheckResult> {
    const TOL: f64 = 1e-12;
    let cfg = AttnConfig::new(16, 4, 1);
    let mut diffs = Vec::new();
    for s in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
        let lwa = AttnWeights::init_linear(&mut rng, 16);
        let x = random(&mut rng, &[16, 16, 16]);
        let a = attention::lwa_forward(&x, &lwa, 4, cfg.heads)?;
        let b = attention::vwa_forward(&x, &unit_ratio_weights(&lwa), &cfg)?;
        diffs.push(a.max_abs_diff(&b)?);
    }
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    Ok(CheckResult {
        name: "equivalence".into(),
        passed: worst < TOL,
        detail: json!({ "max_abs_diff": worst, "per_seed": diffs, "tolerance": TOL }),
    })
}

/// Reverse-mode gradient of `sum(model(x) * probe)` against central
/// differences on `samples` coordinates.
fn grad_vs_fd(
    x: &Tensor,
    probe: &Tensor,
    model: &dyn Fn(&mut Graph, Var) -> Result<Var>,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = model(&mut g, xv)?;
    let m = g.leaf(probe.clone());
    let prod = g.mul(y, m)?;
    let s = g.sum(prod);
    let grads = g.backward(s)?;
    let gx = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let coords: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..x.len())).collect();
    let scalar = |t: &Tensor| -> f64 {
        let mut g = Graph::new();
        let v = g.leaf(t.clone());
        let y = model(&mut g, v).expect("forward succeeded once");
        g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let fd = finite_diff_at(scalar, x, 1e-5, &coords);
    let rev: Vec<f64> = coords.iter().map(|&i| gx.data()[i]).collect();
    Ok(max_rel_error(&rev, &fd))
}

pub fn gradcheck(seed: u64) -> Result<CheckResult> {
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[8, 8, 8]);

    let lwa = AttnWeights::init_linear(&mut rng, 8);
    let probe = random(&mut rng, &[8, 8, 8]);
    let lwa_err = grad_vs_fd(
        &x,
        &probe,
        &|g, v| {
            let w = lwa.bind(g);
            Ok(attention::lwa_var(g, v, &w, 4, 2)?.out)
        },
        24,
        &mut rng,
    )?;

    let cfg = AttnConfig::new(8, 2, 2).with_heads(2);
    let vwa = AttnWeights::init(&mut rng, &cfg)?;
    let vwa_err = grad_vs_fd(
        &x,
        &probe,
        &|g, v| {
            let w = vwa.bind(g);
            Ok(attention::vwa_var(g, v, &w, &cfg)?.out)
        },
        24,
        &mut rng,
    )?;

    let dcfg = VWFormerConfig::tiny(3);
    let dw = VWFormerWeights::init(seed, &dcfg)?;
    let feats = synth_features(seed, 128, 128, dcfg.in_channels, SynthMode::Random)?;
    let dprobe = random(&mut rng, &[3, 32, 32]);
    // differentiate with respect to f8, the input of every branch
    let dec_err = grad_vs_fd(
        &feats.f8,
        &dprobe,
        &|g, f8| {
            let bw = dw.bind(g);
            let fv = vwformer::FeatureVars {
                f4: g.leaf(feats.f4.clone()),
                f8,
                f16: g.leaf(feats.f16.clone()),
                f32: g.leaf(feats.f32.clone()),
            };
            let mut tr = vwformer::ChannelTrace::default();
            let f = vwformer::aggregate_var(g, &fv, &bw, &mut tr)?;
            let f1 = vwformer::multi_scale_var(g, f, &bw, &dcfg, &mut tr)?;
            let f2 = vwformer::lle_fuse_var(g, f1, fv.f4, &bw, &mut tr)?;
            vwformer::pointwise(g, f2, &bw.classifier)
        },
        24,
        &mut rng,
    )?;
    let worst = lwa_err.max(vwa_err).max(dec_err);
    Ok(CheckResult {
        name: "gradcheck".into(),
        passed: worst < TOL,
        detail: json!({ "lwa": lwa_err, "vwa": vwa_err, "vwformer": dec_err, "tolerance": TOL }),
    })
}

pub fn collapse(seed: u64) -> Result<CheckResult> {
    let base = AttnConfig::new(16, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[16, 16, 16]);
    let mut w = AttnWeights::init(&mut rng, &base)?;
    w.zero_key_bias();
    let corner = RowIndex {
        window: (0, 0),
        query: (0, 0),
        head: 0,
    };
    let zero_row = attention_row_dump(&base.with_pad(PadMode::Zero), &w, &x, corner)?;
    let zero = collapse_metric(&zero_row.weights, &zero_row.padded)?;
    let csp_row = attention_row_dump(&base.with_pad(PadMode::CopyShift), &w, &x, corner)?;
    let csp = collapse_metric(&csp_row.weights, &csp_row.padded)?;
    Ok(CheckResult {
        name: "collapse".into(),
        passed: zero.distinct_count == 1 && csp.distinct_count > 1,
        detail: json!({ "zero": zero, "csp": csp }),
    })
}

pub fn channels(seed: u64) -> Result<CheckResult> {
    let cases = [
        (
            "standard",
            VWFormerConfig::standard(ChannelProfile::SwinB, 19),
            [512, 2048, 512, 560, 256],
        ),
        (
            "efficient",
            VWFormerConfig::efficient(ChannelProfile::MitB0, 19),
            [128, 512, 128, 160, 128],
        ),
    ];
    let mut passed = true;
    let mut detail = serde_json::Map::new();
    for (name, cfg, expect) in cases {
        let f = synth_features(seed, 128, 128, cfg.in_channels, SynthMode::Random)?;
        let w = VWFormerWeights::init(seed, &cfg)?;
        let out = vwformer::forward(&f, &w, &cfg)?;
        let ok = out.channels.flow() == expect && out.logits.shape() == [19, 32, 32];
        passed &= ok;
        detail.insert(
            name.into(),
            json!({ "flow": out.channels.flow(), "expected": expect, "logits": out.logits.shape(), "ok": ok }),
        );
    }
    Ok(CheckResult {
        name: "channels".into(),
        passed,
        detail: serde_json::Value::Object(detail),
    })
}
