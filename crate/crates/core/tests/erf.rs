use proptest::prelude::*;
use vwa_core::analysis::{erf_gradient, erf_map, query_scalar, random_inputs, ErfModel, ErfOperator, OperatorSpec};
use vwa_core::attention::dope_halo;
use vwa_core::autodiff::finite_diff;
use vwa_core::windowing::margin;
use vwa_core::{Graph, PadMode, RescaleStrategy, Result, Tensor, Var};

fn spec(window: usize, pad_mode: PadMode, strategy: RescaleStrategy) -> OperatorSpec {
    OperatorSpec {
        channels: 16,
        window,
        heads: 4,
        pad_mode,
        strategy,
        seed: 7,
    }
}

fn model(op: &ErfOperator) -> impl Fn(&mut Graph, Var) -> Result<Var> + Sync + '_ {
    move |g, x| op.apply(g, x)
}

/// Rows (or columns) of the unpadded map that feed window index `wi` when
/// the context is zero padded, widened by the DOPE halo.
fn zero_pad_region(wi: usize, p: usize, r: usize, n: usize) -> (usize, usize) {
    let m = margin(p, r).unwrap() as isize;
    let (before, after) = dope_halo(r);
    let lo = (wi * p) as isize - m - before as isize;
    let hi = (wi * p) as isize - m + (r * p) as isize - 1 + after as isize;
    (lo.max(0) as usize, hi.min(n as isize - 1) as usize)
}

#[test]
fn reverse_mode_matches_finite_differences() {
    for (m, s) in [
        (
            ErfModel::Vwa(2),
            spec(4, PadMode::CopyShift, RescaleStrategy::PreDopePe),
        ),
        (ErfModel::Vwa(4), spec(2, PadMode::Zero, RescaleStrategy::PostPe)),
        (ErfModel::Lwa, spec(4, PadMode::Zero, RescaleStrategy::PreDopePe)),
    ] {
        let op = ErfOperator::build(m, &s).unwrap();
        let f = model(&op);
        let x = random_inputs(&[16, 8, 8], 1, 3).remove(0);
        let q = (5, 2);
        let rev = erf_gradient(&f, &x, q).unwrap();
        let scalar = |t: &Tensor| {
            let mut g = Graph::new();
            let v = g.leaf(t.clone());
            let y = f(&mut g, v).unwrap();
            let s = query_scalar(&mut g, y, q).unwrap();
            g.value(s).data()[0]
        };
        let fd = finite_diff(scalar, &x, 1e-5);
        let per_pixel = Tensor::from_fn(&[1, 8, 8], |i| {
            (0..16).map(|c| fd.at(&[c, i[1], i[2]]).unwrap().abs()).sum()
        });
        for (a, b) in rev.data().iter().zip(per_pixel.data()) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{m}: {a} vs {b}");
            assert_eq!(*a > 1e-9, *b > 1e-6, "{m}: support differs");
        }
    }
}

#[test]
fn operators_have_expected_reach() {
    let s = spec(4, PadMode::CopyShift, RescaleStrategy::PreDopePe);
    let reach = |m: ErfModel, q: (usize, usize)| {
        let op = ErfOperator::build(m, &s).unwrap();
        let map = erf_map(&model(&op), &[16, 16, 16], q, 2, 1).unwrap();
        map
    };
    let short = reach(ErfModel::Short, (9, 3));
    assert_eq!(short.support(), vec![(9, 3)]);
    let lwa = reach(ErfModel::Lwa, (9, 3));
    assert_eq!(lwa.bounding_box().unwrap().to_string(), "(8,0)-(11,3)");
    assert_eq!(lwa.support_area(), 16);
    let ga = reach(ErfModel::Ga, (9, 3));
    assert_eq!(ga.support_area(), 256);
    let max = ga.grid.data().iter().cloned().fold(0.0, f64::max);
    assert!((max - 1.0).abs() < 1e-15);
}

#[test]
fn heatmaps_encode_as_netpbm() {
    let op = ErfOperator::build(ErfModel::Lwa, &spec(4, PadMode::Zero, RescaleStrategy::PreDopePe)).unwrap();
    let map = erf_map(&model(&op), &[16, 8, 12], (0, 0), 1, 0).unwrap();
    let pgm = map.to_pgm();
    assert!(pgm.starts_with(b"P5\n12 8\n255\n"));
    assert_eq!(pgm.len(), b"P5\n12 8\n255\n".len() + 96);
    let ppm = map.to_ppm();
    assert!(ppm.starts_with(b"P6\n12 8\n255\n"));
    assert_eq!(ppm.len(), b"P6\n12 8\n255\n".len() + 3 * 96);
    assert!(pgm[b"P5\n12 8\n255\n".len()..].contains(&255));
}

#[test]
fn model_names_round_trip() {
    for m in [
        ErfModel::Short,
        ErfModel::Lwa,
        ErfModel::Ga,
        ErfModel::Vwa(2),
        ErfModel::Vwa(8),
        ErfModel::VwformerStage,
    ] {
        assert_eq!(m.to_string().parse::<ErfModel>().unwrap(), m);
    }
    assert!("vwa:0".parse::<ErfModel>().is_err());
    assert!("swin".parse::<ErfModel>().is_err());
}

#[test]
fn sampling_is_deterministic() {
    let op = ErfOperator::build(
        ErfModel::Vwa(2),
        &spec(4, PadMode::CopyShift, RescaleStrategy::PreDopePe),
    )
    .unwrap();
    let a = erf_map(&model(&op), &[16, 16, 16], (7, 7), 4, 9).unwrap();
    let b = erf_map(&model(&op), &[16, 16, 16], (7, 7), 4, 9).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_padded_reach_is_clipped_context(qi in 0usize..16, qj in 0usize..16, ri in 0usize..2) {
        let (p, r) = [(4, 2), (2, 4)][ri];
        let op = ErfOperator::build(ErfModel::Vwa(r), &spec(p, PadMode::Zero, RescaleStrategy::PreDopePe)).unwrap();
        let map = erf_map(&model(&op), &[16, 16, 16], (qi, qj), 1, qi as u64).unwrap();
        let (top, bottom) = zero_pad_region(qi / p, p, r, 16);
        let (left, right) = zero_pad_region(qj / p, p, r, 16);
        let mut expect = Vec::new();
        for i in top..=bottom {
            for j in left..=right {
                expect.push((i, j));
            }
        }
        prop_assert_eq!(map.support(), expect);
    }
}
