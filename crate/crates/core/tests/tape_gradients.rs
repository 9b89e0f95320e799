use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vwa_core::autodiff::{finite_diff, max_rel_error};
use vwa_core::windowing;
use vwa_core::{Graph, Tensor, Var};

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0))
}

/// Tape gradient of `sum(op(x) * probe)` against central differences, for
/// every coordinate of `x`.
fn check(x: &Tensor, op: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let probe_shape = {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let y = op(&mut g, v);
        g.shape(y).to_vec()
    };
    let probe = random(1234, &probe_shape);
    let value = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.leaf(t.clone());
        let y = op(&mut g, v);
        g.value(y)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let y = op(&mut g, v);
    let m = g.leaf(probe.clone());
    let p = g.mul(y, m).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    let fd = finite_diff(value, x, 1e-5);
    max_rel_error(grads.get(v).unwrap().data(), fd.data())
}

const TOL: f64 = 1e-7;

#[test]
fn conv_with_stride_and_weights() {
    let x = random(1, &[3, 7, 7]);
    let w = random(2, &[4, 3, 3, 3]);
    let b = random(3, &[4]);
    for stride in [1, 2, 4] {
        assert!(
            check(&x, |g, v| {
                let (wv, bv) = (g.leaf(w.clone()), g.leaf(b.clone()));
                g.conv2d(v, wv, bv, stride).unwrap()
            }) < TOL
        );
        assert!(
            check(&w, |g, wv| {
                let (xv, bv) = (g.leaf(x.clone()), g.leaf(b.clone()));
                g.conv2d(xv, wv, bv, stride).unwrap()
            }) < TOL
        );
    }
}

#[test]
fn batched_conv() {
    let x = random(4, &[2, 2, 4, 4]);
    let w = random(5, &[3, 2, 2, 2]);
    let b = random(6, &[3]);
    assert!(
        check(&x, |g, v| {
            let (wv, bv) = (g.leaf(w.clone()), g.leaf(b.clone()));
            g.conv2d(v, wv, bv, 2).unwrap()
        }) < TOL
    );
}

#[test]
fn linear_and_matmul() {
    let x = random(7, &[2, 5, 3]);
    let w = random(8, &[4, 3]);
    let b = random(9, &[4]);
    assert!(
        check(&x, |g, v| {
            let (wv, bv) = (g.leaf(w.clone()), g.leaf(b.clone()));
            g.linear(v, wv, bv).unwrap()
        }) < TOL
    );
    assert!(
        check(&w, |g, wv| {
            let (xv, bv) = (g.leaf(x.clone()), g.leaf(b.clone()));
            g.linear(xv, wv, bv).unwrap()
        }) < TOL
    );
    let a = random(10, &[3, 2, 4]);
    let c = random(11, &[3, 4, 5]);
    assert!(
        check(&a, |g, v| {
            let cv = g.leaf(c.clone());
            g.matmul(v, cv).unwrap()
        }) < TOL
    );
    assert!(
        check(&c, |g, v| {
            let av = g.leaf(a.clone());
            g.matmul(av, v).unwrap()
        }) < TOL
    );
}

#[test]
fn softmax_every_axis() {
    let x = random(12, &[3, 4, 5]).scale(3.0);
    for axis in 0..3 {
        assert!(check(&x, |g, v| g.softmax(v, axis).unwrap()) < TOL, "axis {axis}");
    }
}

#[test]
fn resampling_ops() {
    let x = random(13, &[2, 3, 4]);
    assert!(check(&x, |g, v| g.bilinear_upsample(v, 7, 9).unwrap()) < TOL);
    let y = random(14, &[2, 6, 6]);
    assert!(check(&y, |g, v| g.avg_pool(v, 3).unwrap()) < TOL);
}

#[test]
fn structural_ops() {
    let x = random(15, &[2, 6, 8]);
    assert!(check(&x, |g, v| g.permute(v, &[2, 0, 1]).unwrap()) < TOL);
    assert!(check(&x, |g, v| g.slice(v, 2, 1, 5).unwrap()) < TOL);
    assert!(check(&x, |g, v| g.pad_zero(v, [1, 2, 0, 3]).unwrap()) < TOL);
    assert!(
        check(&x, |g, v| {
            let (w, r, c) = g.unfold(v, 4, 2, 1).unwrap();
            let _ = (r, c);
            w
        }) < TOL
    );
    assert!(
        check(&x, |g, v| {
            let a = g.slice(v, 1, 0, 2).unwrap();
            g.concat(&[v, a, v], 1).unwrap()
        }) < TOL
    );
    assert!(
        check(&x, |g, v| {
            let (w, r, c) = g.unfold(v, 2, 2, 0).unwrap();
            g.fold(w, r, c).unwrap()
        }) < TOL
    );
}

#[test]
fn both_paddings() {
    let x = random(16, &[2, 8, 8]);
    assert!(check(&x, |g, v| windowing::csp_pad_var(g, v, 2, 4).unwrap()) < TOL);
    assert!(check(&x, |g, v| windowing::zero_pad_var(g, v, 2, 3).unwrap()) < TOL);
}

#[test]
fn reused_node() {
    let x = random(17, &[3, 3]);
    assert!(
        check(&x, |g, v| {
            let y = g.mul(v, v).unwrap();
            let z = g.add(y, v).unwrap();
            g.scale(z, -0.5)
        }) < TOL
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients_any_geometry(
        cin in 1usize..3, cout in 1usize..3, k in 1usize..4, stride in 1usize..3,
        extra in 0usize..4, seed in 0u64..1000,
    ) {
        let side = k + stride * extra;
        let x = random(seed, &[cin, side, side]);
        let w = random(seed + 1, &[cout, cin, k, k]);
        let b = random(seed + 2, &[cout]);
        let err = check(&x, |g, v| {
            let (wv, bv) = (g.leaf(w.clone()), g.leaf(b.clone()));
            g.conv2d(v, wv, bv, stride).unwrap()
        });
        prop_assert!(err < TOL);
    }

    #[test]
    fn csp_gradient_counts_copies(p in 1usize..3, r in 1usize..4, seed in 0u64..100) {
        prop_assume!(((r - 1) * p) % 2 == 0);
        let side = 4 * p.max(r);
        let x = random(seed, &[1, side, side]);
        // d sum(csp(x)) / dx is the number of times each pixel is copied
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let y = windowing::csp_pad_var(&mut g, v, p, r).unwrap();
        let s = g.sum(y);
        let grad = g.backward(s).unwrap().get(v).unwrap().clone();
        let total: f64 = grad.data().iter().sum();
        let padded_side = side + (r - 1) * p;
        prop_assert_eq!(total as usize, padded_side * padded_side);
        prop_assert!(grad.data().iter().all(|&d| d >= 1.0 && d.fract() == 0.0));
    }
}
