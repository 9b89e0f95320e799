//! Index maps shared by the pure tensor kernels and their tape counterparts.
//!
//! Every layout op (slice, permute, pad, unfold, fold) is a gather: each
//! output element copies one input element or is zero. Interpolating ops
//! (bilinear upsampling, average pooling) are sparse linear maps. Keeping
//! the maps in one place means forward and backward never disagree.

use crate::error::{Error, Result};

/// Marks an output element that does not read from the input (zero fill).
pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub(crate) struct GatherMap {
    pub out_shape: Vec<usize>,
    pub src: Vec<u32>,
}

impl GatherMap {
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.src
            .iter()
            .map(|&s| if s == NONE { 0.0 } else { input[s as usize] })
            .collect()
    }

    /// Scatter-add of an output gradient back onto the input layout.
    pub fn scatter(&self, grad_out: &[f64], input_len: usize) -> Vec<f64> {
        let mut g = vec![0.0; input_len];
        for (&s, &go) in self.src.iter().zip(grad_out) {
            if s != NONE {
                g[s as usize] += go;
            }
        }
        g
    }
}

/// Compressed-row sparse map: `out[i] = sum_j weight[j] * in[index[j]]` for
/// `j` in `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone)]
pub(crate) struct SparseMap {
    pub out_shape: Vec<usize>,
    pub offsets: Vec<usize>,
    pub index: Vec<u32>,
    pub weight: Vec<f64>,
}

impl SparseMap {
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.offsets
            .windows(2)
            .map(|r| {
                (r[0]..r[1])
                    .map(|j| self.weight[j] * input[self.index[j] as usize])
                    .sum()
            })
            .collect()
    }

    pub fn scatter(&self, grad_out: &[f64], input_len: usize) -> Vec<f64> {
        let mut g = vec![0.0; input_len];
        for (i, r) in self.offsets.windows(2).enumerate() {
            for j in r[0]..r[1] {
                g[self.index[j] as usize] += self.weight[j] * grad_out[i];
            }
        }
        g
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_len(n: usize) -> Result<()> {
    if n >= NONE as usize {
        return Err(Error::Shape(format!("{n} elements exceed the index range")));
    }
    Ok(())
}

pub(crate) fn slice(shape: &[usize], axis: usize, lo: usize, hi: usize) -> Result<GatherMap> {
    if axis >= shape.len() {
        return Err(Error::Index(format!(
            "axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    if lo >= hi || hi > shape[axis] {
        return Err(Error::Index(format!(
            "slice [{lo}, {hi}) invalid for axis {axis} of extent {}",
            shape[axis]
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = hi - lo;
    let mut src = Vec::with_capacity(outer * (hi - lo) * inner);
    for o in 0..outer {
        for a in lo..hi {
            let base = (o * shape[axis] + a) * inner;
            src.extend((base..base + inner).map(|v| v as u32));
        }
    }
    Ok(GatherMap { out_shape, src })
}

pub(crate) fn permute(shape: &[usize], axes: &[usize]) -> Result<GatherMap> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Shape(format!("{axes:?} is not a permutation of rank {rank}")));
    }
    check_len(shape.iter().product())?;
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n: usize = out_shape.iter().product();
    let mut src = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let off: usize = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
        src.push(off as u32);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(GatherMap { out_shape, src })
}

/// Zero margins on the last two axes: `(top, bottom, left, right)`.
pub(crate) fn pad_zero(shape: &[usize], margins: [usize; 4]) -> Result<GatherMap> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("padding needs rank >= 2, got {shape:?}")));
    }
    let [top, bottom, left, right] = margins;
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (ph, pw) = (h + top + bottom, w + left + right);
    let outer: usize = shape[..r - 2].iter().product();
    check_len(outer * h * w)?;
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = ph;
    out_shape[r - 1] = pw;
    let mut src = Vec::with_capacity(outer * ph * pw);
    for o in 0..outer {
        for y in 0..ph {
            for x in 0..pw {
                let inside = y >= top && y < top + h && x >= left && x < left + w;
                src.push(if inside {
                    (o * h * w + (y - top) * w + (x - left)) as u32
                } else {
                    NONE
                });
            }
        }
    }
    Ok(GatherMap { out_shape, src })
}

/// Sliding windows over a `C x H x W` map with an implicit zero margin.
/// Output layout is `(rows*cols, kernel, kernel, C)`.
pub(crate) fn unfold(shape: &[usize], kernel: usize, stride: usize, pad: usize) -> Result<(GatherMap, usize, usize)> {
    let [c, h, w] = chw(shape)?;
    if kernel == 0 || stride == 0 {
        return Err(Error::geometry("kernel", "kernel and stride must be >= 1"));
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let rows = grid_extent("height", hp, kernel, stride)?;
    let cols = grid_extent("width", wp, kernel, stride)?;
    check_len(c * h * w)?;
    let mut src = Vec::with_capacity(rows * cols * kernel * kernel * c);
    for i in 0..rows {
        for j in 0..cols {
            for dy in 0..kernel {
                for dx in 0..kernel {
                    let y = (i * stride + dy) as isize - pad as isize;
                    let x = (j * stride + dx) as isize - pad as isize;
                    let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                    for ch in 0..c {
                        src.push(if inside {
                            (ch * h * w + y as usize * w + x as usize) as u32
                        } else {
                            NONE
                        });
                    }
                }
            }
        }
    }
    let out_shape = vec![rows * cols, kernel, kernel, c];
    Ok((GatherMap { out_shape, src }, rows, cols))
}

/// Inverse of a non-overlapping unfold: `(rows*cols, k, k, C)` back to `C x rows*k x cols*k`.
pub(crate) fn fold(shape: &[usize], rows: usize, cols: usize) -> Result<GatherMap> {
    if shape.len() != 4 || shape[1] != shape[2] || shape[0] != rows * cols {
        return Err(Error::Shape(format!(
            "cannot fold {shape:?} into a {rows}x{cols} grid of square windows"
        )));
    }
    let (k, c) = (shape[1], shape[3]);
    let (h, w) = (rows * k, cols * k);
    check_len(c * h * w)?;
    let mut src = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let win = (y / k) * cols + x / k;
                src.push((((win * k + y % k) * k + x % k) * c + ch) as u32);
            }
        }
    }
    Ok(GatherMap {
        out_shape: vec![c, h, w],
        src,
    })
}

/// Bilinear interpolation with half-pixel centers over the last two axes.
pub(crate) fn upsample_bilinear(shape: &[usize], out_h: usize, out_w: usize) -> Result<SparseMap> {
    let [c, h, w] = chw(shape)?;
    if out_h < h || out_w < w {
        return Err(Error::Unsupported(format!(
            "bilinear upsampling from {h}x{w} down to {out_h}x{out_w}"
        )));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                let l = if i1 == i0 { 0.0 } else { s - i0 as f64 };
                (i0, i1, l)
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut offsets = vec![0];
    let mut index = Vec::new();
    let mut weight = Vec::new();
    for ch in 0..c {
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                for (y, wy) in [(y0, 1.0 - ly), (y1, ly)] {
                    for (x, wx) in [(x0, 1.0 - lx), (x1, lx)] {
                        let wt = wy * wx;
                        if wt != 0.0 {
                            index.push((ch * h * w + y * w + x) as u32);
                            weight.push(wt);
                        }
                    }
                }
                offsets.push(index.len());
            }
        }
    }
    Ok(SparseMap {
        out_shape: vec![c, out_h, out_w],
        offsets,
        index,
        weight,
    })
}

/// Non-overlapping `k x k` average pooling over the last two axes.
pub(crate) fn avg_pool(shape: &[usize], k: usize) -> Result<SparseMap> {
    let r = shape.len();
    if r < 2 || k == 0 {
        return Err(Error::Shape(format!("cannot pool {shape:?} with kernel {k}")));
    }
    let (h, w) = (shape[r - 2], shape[r - 1]);
    if h % k != 0 {
        return Err(Error::geometry("height", format!("{h} not divisible by pool size {k}")));
    }
    if w % k != 0 {
        return Err(Error::geometry("width", format!("{w} not divisible by pool size {k}")));
    }
    let outer: usize = shape[..r - 2].iter().product();
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut offsets = vec![0];
    let mut index = Vec::with_capacity(outer * h * w);
    for o in 0..outer {
        for y in 0..oh {
            for x in 0..ow {
                for dy in 0..k {
                    for dx in 0..k {
                        index.push((o * h * w + (y * k + dy) * w + x * k + dx) as u32);
                    }
                }
                offsets.push(index.len());
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    let weight = vec![inv; index.len()];
    Ok(SparseMap {
        out_shape,
        offsets,
        index,
        weight,
    })
}

pub(crate) fn chw(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!("expected C x H x W, got {shape:?}"))),
    }
}

fn grid_extent(dim: &'static str, n: usize, kernel: usize, stride: usize) -> Result<usize> {
    if n < kernel {
        return Err(Error::geometry(dim, format!("extent {n} smaller than kernel {kernel}")));
    }
    if !(n - kernel).is_multiple_of(stride) {
        return Err(Error::geometry(
            dim,
            format!("({n} - {kernel}) not divisible by stride {stride}"),
        ));
    }
    Ok((n - kernel) / stride + 1)
}
