//! Dense numeric kernels on flat row-major buffers.

use rayon::prelude::*;

/// `c[m x n] += a[m x k] * b[k x n]`. Large products split rows across
/// threads; each row is still summed in the same order.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || k == 0 {
        return;
    }
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(crow, arow)| gemm_row(arow, b, crow, n));
    } else {
        for (crow, arow) in c.chunks_mut(n).zip(a.chunks(k)) {
            gemm_row(arow, b, crow, n);
        }
    }
}

const PAR_THRESHOLD: usize = 1 << 18;

fn gemm_row(arow: &[f64], b: &[f64], crow: &mut [f64], n: usize) {
    for (p, &av) in arow.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let brow = &b[p * n..(p + 1) * n];
        for (cv, &bv) in crow.iter_mut().zip(brow) {
            *cv += av * bv;
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.oh * self.ow * self.k * self.k * self.cin * self.cout) as u64
    }
}

/// `(Cin, H, W)` image to `(Cin*k*k, oh*ow)` patch matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (k, s) = (g.k, g.stride);
    let npos = g.oh * g.ow;
    let mut cols = vec![0.0; g.cin * k * k * npos];
    for c in 0..g.cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..g.oh {
                    let src = &x[c * g.h * g.w + (oy * s + dy) * g.w..];
                    for ox in 0..g.ow {
                        dst[oy * g.ow + ox] = src[ox * s + dx];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_acc(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let (k, s) = (g.k, g.stride);
    let npos = g.oh * g.ow;
    for c in 0..g.cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..g.oh {
                    let base = c * g.h * g.w + (oy * s + dy) * g.w + dx;
                    for ox in 0..g.ow {
                        x[base + ox * s] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let npos = g.oh * g.ow;
    let ckk = g.cin * g.k * g.k;
    let img_in = g.cin * g.h * g.w;
    let img_out = g.cout * npos;
    let mut out = vec![0.0; g.batch * img_out];
    for n in 0..g.batch {
        let xi = &x[n * img_in..(n + 1) * img_in];
        let o = &mut out[n * img_out..(n + 1) * img_out];
        for (co, chunk) in o.chunks_mut(npos).enumerate() {
            chunk.fill(b[co]);
        }
        if g.pointwise() {
            gemm_acc(w, xi, o, g.cout, ckk, npos);
        } else {
            let cols = im2col(xi, g);
            gemm_acc(w, &cols, o, g.cout, ckk, npos);
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn conv2d_backward(x: &[f64], w: &[f64], gout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let npos = g.oh * g.ow;
    let ckk = g.cin * g.k * g.k;
    let img_in = g.cin * g.h * g.w;
    let img_out = g.cout * npos;
    let wt = transpose(w, g.cout, ckk);
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.cout];
    for n in 0..g.batch {
        let xi = &x[n * img_in..(n + 1) * img_in];
        let go = &gout[n * img_out..(n + 1) * img_out];
        for (co, chunk) in go.chunks(npos).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
        let gxi = &mut gx[n * img_in..(n + 1) * img_in];
        if g.pointwise() {
            gemm_acc(go, &transpose(xi, ckk, npos), &mut gw, g.cout, npos, ckk);
            gemm_acc(&wt, go, gxi, ckk, g.cout, npos);
        } else {
            let cols = im2col(xi, g);
            gemm_acc(go, &transpose(&cols, ckk, npos), &mut gw, g.cout, npos, ckk);
            let mut gcols = vec![0.0; ckk * npos];
            gemm_acc(&wt, go, &mut gcols, ckk, g.cout, npos);
            col2im_acc(&gcols, g, gxi);
        }
    }
    (gx, gw, gb)
}

/// Softmax along an axis described by `(outer, len, inner)` strides.
pub(crate) fn softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let max = (0..len).map(|a| x[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for a in 0..len {
                let e = (x[at(a)] - max).exp();
                y[at(a)] = e;
                sum += e;
            }
            for a in 0..len {
                y[at(a)] /= sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], gy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let dot: f64 = (0..len).map(|a| y[at(a)] * gy[at(a)]).sum();
            for a in 0..len {
                gx[at(a)] = y[at(a)] * (gy[at(a)] - dot);
            }
        }
    }
    gx
}
