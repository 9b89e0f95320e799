//! Central finite differences, the independent oracle for the tape.

use crate::tensor::Tensor;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let coords: Vec<usize> = (0..x.len()).collect();
    let vals = finite_diff_at(f, x, eps, &coords);
    Tensor::from_parts(x.shape().to_vec(), vals)
}

/// Central differences for a subset of flat coordinates.
pub fn finite_diff_at(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64, coords: &[usize]) -> Vec<f64> {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_error(x, y)).fold(0.0, f64::max)
}
