use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vwa_core::windowing::{self, csp_pad, extract_contexts, margin, partition_queries, zero_pad};
use vwa_core::Tensor;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0))
}

/// Source index along one axis of length `n` for padded index `t`.
fn csp_source(t: usize, n: usize, p: usize, r: usize) -> usize {
    let m = (r - 1) * p / 2;
    if t < m {
        (r + 1) * p / 2 + t
    } else if t >= m + n {
        n - r * p + (t - m - n)
    } else {
        t - m
    }
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    (1usize..5, 1usize..5, 1usize..4, 1usize..4, 1usize..3).prop_filter_map("odd margin", |(p, r, th, tw, c)| {
        if (r - 1) * p % 2 != 0 {
            return None;
        }
        // windows tile the map and the context fits inside it
        Some((p, r, p * (th + r), p * (tw + r), c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn copy_shift_follows_source_map((p, r, h, w, c) in geometry(), seed in 0u64..1000) {
        let x = random(seed, &[c, h, w]);
        let y = csp_pad(&x, p, r).unwrap();
        let m = margin(p, r).unwrap();
        prop_assert_eq!(y.shape(), &[c, h + 2 * m, w + 2 * m][..]);
        for k in 0..c {
            for i in 0..h + 2 * m {
                for j in 0..w + 2 * m {
                    let src = [k, csp_source(i, h, p, r), csp_source(j, w, p, r)];
                    prop_assert_eq!(y.at(&[k, i, j]).unwrap(), x.at(&src).unwrap());
                }
            }
        }
    }

    #[test]
    fn zero_padding_keeps_interior((p, r, h, w, c) in geometry(), seed in 0u64..1000) {
        let x = random(seed, &[c, h, w]);
        let y = zero_pad(&x, p, r).unwrap();
        let m = margin(p, r).unwrap();
        let inner = y.slice(1, m, m + h).unwrap().slice(2, m, m + w).unwrap();
        prop_assert_eq!(inner.data(), x.data());
        prop_assert!((y.sum() - x.sum()).abs() < 1e-9);
    }

    #[test]
    fn contexts_center_on_query_windows((p, r, h, w, c) in geometry(), seed in 0u64..1000, zero in any::<bool>()) {
        let x = random(seed, &[c, h, w]);
        let padded = if zero { zero_pad(&x, p, r) } else { csp_pad(&x, p, r) }.unwrap();
        let m = margin(p, r).unwrap();
        let queries = partition_queries(&x, p).unwrap();
        let contexts = extract_contexts(&padded, p, r).unwrap();
        prop_assert_eq!((contexts.rows, contexts.cols), (queries.rows, queries.cols));
        for i in 0..queries.rows {
            for j in 0..queries.cols {
                let q = queries.window(i, j).unwrap();
                let ctx = contexts.window(i, j).unwrap();
                prop_assert_eq!(ctx.shape(), &[c, r * p, r * p][..]);
                let center = ctx.slice(1, m, m + p).unwrap().slice(2, m, m + p).unwrap();
                prop_assert_eq!(center.data(), q.data());
            }
        }
    }

    #[test]
    fn query_windows_fold_back(p in 1usize..5, th in 1usize..5, tw in 1usize..5, seed in 0u64..1000) {
        let x = random(seed, &[2, p * th, p * tw]);
        let back = partition_queries(&x, p).unwrap().fold().unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn conv_matches_direct_sum(
        cin in 1usize..3, cout in 1usize..3, k in 1usize..4, stride in 1usize..3, extra in 0usize..4, seed in 0u64..1000,
    ) {
        let side = k + stride * extra;
        let x = random(seed, &[cin, side, side]);
        let wt = random(seed + 1, &[cout, cin, k, k]);
        let b = random(seed + 2, &[cout]);
        let y = x.conv2d(&wt, &b, stride).unwrap();
        let out = (side - k) / stride + 1;
        prop_assert_eq!(y.shape(), &[cout, out, out][..]);
        for o in 0..cout {
            for i in 0..out {
                for j in 0..out {
                    let mut s = b.data()[o];
                    for ci in 0..cin {
                        for di in 0..k {
                            for dj in 0..k {
                                s += wt.at(&[o, ci, di, dj]).unwrap()
                                    * x.at(&[ci, i * stride + di, j * stride + dj]).unwrap();
                            }
                        }
                    }
                    prop_assert!((y.at(&[o, i, j]).unwrap() - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn odd_margin_needs_even_window() {
    assert!(margin(3, 2).is_err());
    assert_eq!(margin(4, 2).unwrap(), 2);
    assert_eq!(margin(3, 3).unwrap(), 3);
    assert_eq!(margin(5, 1).unwrap(), 0);
}

#[test]
fn context_larger_than_map_is_rejected() {
    let x = random(0, &[1, 8, 8]);
    assert!(csp_pad(&x, 4, 4).is_err());
    assert!(partition_queries(&x, 3).is_err());
}

#[test]
fn pad_dispatches_on_mode() {
    let x = random(5, &[1, 8, 8]);
    let spec = windowing::PadSpec::new(windowing::PadMode::Zero, 2, 3);
    assert_eq!(windowing::pad(&x, spec).unwrap(), zero_pad(&x, 2, 3).unwrap());
    let spec = windowing::PadSpec::new(windowing::PadMode::CopyShift, 2, 3);
    assert_eq!(windowing::pad(&x, spec).unwrap(), csp_pad(&x, 2, 3).unwrap());
}
