//! Dense row-major `f64` tensors and the handful of kernels the attention
//! layers are built from.
//!
//! All operations here are pure: they borrow their inputs and return a new
//! tensor. The differentiable versions on [`crate::autodiff::Graph`] share
//! the same index maps and numeric kernels, so a value computed through the
//! tape is bit-identical to one computed directly.

mod io;
pub(crate) mod kernels;
pub(crate) mod maps;

use crate::error::{Error, Result};
use kernels::ConvGeom;

pub use io::{read_tensor, write_tensor, MAGIC};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("dimension sizes must be >= 1, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for buffers whose length is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self::from_parts(shape.to_vec(), data)
    }

    /// `n x n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::Index(format!("{index:?} out of bounds for {:?}", self.shape)));
        }
        Ok(index.iter().zip(maps::strides(&self.shape)).map(|(i, s)| i * s).sum())
    }

    pub fn at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn slice(&self, axis: usize, lo: usize, hi: usize) -> Result<Tensor> {
        self.gather(&maps::slice(&self.shape, axis, lo, hi)?)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        self.gather(&maps::permute(&self.shape, axes)?)
    }

    /// Zero margins `(top, bottom, left, right)` on the last two axes.
    pub fn pad_zero(&self, margins: [usize; 4]) -> Result<Tensor> {
        self.gather(&maps::pad_zero(&self.shape, margins)?)
    }

    /// Non-overlapping average pooling over the last two axes.
    pub fn avg_pool(&self, k: usize) -> Result<Tensor> {
        let m = maps::avg_pool(&self.shape, k)?;
        Ok(Self::from_parts(m.out_shape.clone(), m.apply(&self.data)))
    }

    /// Bilinear upsampling of a `C x h x w` map with half-pixel centers
    /// (the `align_corners = false` convention).
    pub fn bilinear_upsample(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let m = maps::upsample_bilinear(&self.shape, out_h, out_w)?;
        Ok(Self::from_parts(m.out_shape.clone(), m.apply(&self.data)))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split(&self.shape, axis)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            kernels::softmax(&self.data, outer, len, inner),
        ))
    }

    /// Batched product `(..., m, k) x (..., k, n)`; leading dims must match.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let d = matmul_dims(&self.shape, &other.shape)?;
        Ok(Self::from_parts(
            d.out_shape.clone(),
            matmul_raw(&self.data, &other.data, &d),
        ))
    }

    /// Cross-correlation of `(Cin, H, W)` or `(N, Cin, H, W)` with a
    /// `(Cout, Cin, k, k)` kernel. No implicit padding; the bias is the only
    /// broadcast.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        let (g, out_shape) = conv_geom(&self.shape, &weight.shape, &bias.shape, stride)?;
        Ok(Self::from_parts(
            out_shape,
            kernels::conv2d_forward(&self.data, &weight.data, &bias.data, &g),
        ))
    }

    /// Token-wise affine map: `(..., Cin)` times `(Cout, Cin)` plus bias.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (rows, cin, cout, out_shape) = linear_dims(&self.shape, &weight.shape, &bias.shape)?;
        Ok(Self::from_parts(
            out_shape,
            linear_raw(&self.data, &weight.data, &bias.data, rows, cin, cout),
        ))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
        let out_shape = concat_shape(&shapes, axis)?;
        let datas: Vec<&[f64]> = parts.iter().map(|t| t.data()).collect();
        Ok(Self::from_parts(
            out_shape.clone(),
            concat_raw(&datas, &shapes, axis, &out_shape),
        ))
    }

    /// Sliding windows of a `C x H x W` map with an explicit zero margin.
    pub fn unfold(&self, kernel: usize, stride: usize, pad: usize) -> Result<WindowSet> {
        let (m, rows, cols) = maps::unfold(&self.shape, kernel, stride, pad)?;
        Ok(WindowSet {
            windows: self.gather(&m)?,
            rows,
            cols,
            win_h: kernel,
            win_w: kernel,
            stride,
        })
    }

    pub(crate) fn gather(&self, m: &maps::GatherMap) -> Result<Tensor> {
        Ok(Self::from_parts(m.out_shape.clone(), m.apply(&self.data)))
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// A batch of square windows cut from a `C x H x W` map.
///
/// `windows` has shape `(rows * cols, win_h, win_w, C)`; window `(i, j)` is
/// stored at index `i * cols + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub win_h: usize,
    pub win_w: usize,
    pub stride: usize,
}

impl WindowSet {
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[3]
    }

    /// Window `(i, j)` in `C x win_h x win_w` layout.
    pub fn window(&self, i: usize, j: usize) -> Result<Tensor> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::Index(format!(
                "window ({i}, {j}) outside a {}x{} grid",
                self.rows, self.cols
            )));
        }
        let idx = i * self.cols + j;
        self.windows
            .slice(0, idx, idx + 1)?
            .reshape(&[self.win_h, self.win_w, self.channels()])?
            .permute(&[2, 0, 1])
    }

    /// Re-assembles non-overlapping windows into the source map.
    pub fn fold(&self) -> Result<Tensor> {
        if self.stride != self.win_h || self.win_h != self.win_w {
            return Err(Error::geometry(
                "stride",
                format!(
                    "fold needs stride == kernel, got stride {} kernel {}",
                    self.stride, self.win_h
                ),
            ));
        }
        self.windows
            .gather(&maps::fold(self.windows.shape(), self.rows, self.cols)?)
    }
}

// ---- shape checks shared with the tape ----

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Index(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

#[derive(Debug, Clone)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulDims {
    pub fn macs(&self) -> u64 {
        (self.batch * self.m * self.n * self.k) as u64
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    if a.len() < 2 || a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(Error::Shape(format!("cannot multiply {a:?} by {b:?}")));
    }
    let r = a.len();
    let (m, k, k2, n) = (a[r - 2], a[r - 1], b[r - 2], b[r - 1]);
    if k != k2 {
        return Err(Error::Shape(format!("inner dimensions differ: {a:?} x {b:?}")));
    }
    let mut out_shape = a.to_vec();
    out_shape[r - 1] = n;
    Ok(MatmulDims {
        batch: a[..r - 2].iter().product(),
        m,
        k,
        n,
        out_shape,
    })
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], d: &MatmulDims) -> Vec<f64> {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![0.0; d.batch * m * n];
    for bi in 0..d.batch {
        kernels::gemm_acc(
            &a[bi * m * k..(bi + 1) * m * k],
            &b[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    out
}

pub(crate) fn conv_geom(x: &[usize], w: &[usize], b: &[usize], stride: usize) -> Result<(ConvGeom, Vec<usize>)> {
    let (batch, cin, h, wd) = match *x {
        [c, h, w] => (1, c, h, w),
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::Shape(format!("conv2d input must be rank 3 or 4, got {x:?}"))),
    };
    let [cout, wcin, kh, kw] = match *w {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::Shape(format!("conv2d weight must be rank 4, got {w:?}"))),
    };
    if wcin != cin || kh != kw {
        return Err(Error::Shape(format!("weight {w:?} incompatible with input {x:?}")));
    }
    if b != [cout] {
        return Err(Error::Shape(format!(
            "bias {b:?} does not match {cout} output channels"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    let k = kh;
    let extent = |dim: &str, n: usize| -> Result<usize> {
        if n < k || !(n - k).is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "conv2d {dim} {n} incompatible with kernel {k} stride {stride}"
            )));
        }
        Ok((n - k) / stride + 1)
    };
    let (oh, ow) = (extent("height", h)?, extent("width", wd)?);
    let g = ConvGeom {
        batch,
        cin,
        h,
        w: wd,
        cout,
        k,
        stride,
        oh,
        ow,
    };
    let out_shape = if x.len() == 3 {
        vec![cout, oh, ow]
    } else {
        vec![batch, cout, oh, ow]
    };
    Ok((g, out_shape))
}

pub(crate) fn linear_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let cin = *x.last().ok_or_else(|| Error::Shape("linear on empty shape".into()))?;
    let (cout, wcin) = match *w {
        [o, i] => (o, i),
        _ => return Err(Error::Shape(format!("linear weight must be rank 2, got {w:?}"))),
    };
    if wcin != cin || b != [cout] {
        return Err(Error::Shape(format!(
            "linear {w:?}/{b:?} incompatible with input {x:?}"
        )));
    }
    let rows = x[..x.len() - 1].iter().product();
    let mut out_shape = x.to_vec();
    *out_shape.last_mut().unwrap() = cout;
    Ok((rows, cin, cout, out_shape))
}

pub(crate) fn linear_raw(x: &[f64], w: &[f64], b: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..rows).flat_map(|_| b.iter().copied()).collect();
    kernels::gemm_acc(x, &kernels::transpose(w, cout, cin), &mut out, rows, cin, cout);
    out
}

pub(crate) fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    if axis >= first.len() {
        return Err(Error::Index(format!("axis {axis} out of range for {first:?}")));
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let same_rest = s.len() == first.len()
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !same_rest {
            return Err(Error::Shape(format!(
                "cannot concat {s:?} with {first:?} on axis {axis}"
            )));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub(crate) fn concat_raw(parts: &[&[f64]], shapes: &[&[usize]], axis: usize, out_shape: &[usize]) -> Vec<f64> {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for (p, s) in parts.iter().zip(shapes) {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&p[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// MACs of a conv2d call: `N * H' * W' * k^2 * Cin * Cout`.
pub fn conv2d_macs(input: &[usize], weight: &[usize], stride: usize) -> Result<u64> {
    let cout = *weight.first().ok_or_else(|| Error::Shape("empty weight".into()))?;
    Ok(conv_geom(input, weight, &[cout], stride)?.0.macs())
}

/// MACs of a batched matmul: `batch * m * n * k`.
pub fn matmul_macs(a: &[usize], b: &[usize]) -> Result<u64> {
    Ok(matmul_dims(a, b)?.macs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::new(shape.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn unfold_partition_2x2() {
        let x = ramp(&[1, 4, 4]);
        let ws = x.unfold(2, 2, 0).unwrap();
        assert_eq!(ws.count(), 4);
        let w00 = ws.window(0, 0).unwrap();
        assert_eq!(w00.data(), &[0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn unfold_sliding_3x3() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let ws = x.unfold(2, 1, 0).unwrap();
        assert_eq!(ws.count(), 4);
        assert_eq!(ws.window(0, 0).unwrap().data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(ws.window(1, 1).unwrap().data(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn unfold_whole_map_is_identity() {
        let x = ramp(&[2, 5, 5]);
        let ws = x.unfold(5, 5, 0).unwrap();
        assert_eq!(ws.count(), 1);
        assert_eq!(ws.window(0, 0).unwrap(), x);
    }

    #[test]
    fn unfold_names_offending_dimension() {
        let x = ramp(&[1, 4, 5]);
        match x.unfold(2, 2, 0) {
            Err(Error::Geometry { dim, .. }) => assert_eq!(dim, "width"),
            other => panic!("expected geometry error, got {other:?}"),
        }
        match ramp(&[1, 5, 4]).unfold(2, 2, 0) {
            Err(Error::Geometry { dim, .. }) => assert_eq!(dim, "height"),
            other => panic!("expected geometry error, got {other:?}"),
        }
    }

    #[test]
    fn unfold_with_zero_margin() {
        let x = Tensor::full(&[1, 2, 2], 1.0);
        let ws = x.unfold(2, 1, 1).unwrap();
        assert_eq!(ws.count(), 9);
        assert_eq!(ws.window(0, 0).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn fold_inverts_partition() {
        let x = ramp(&[3, 6, 9]);
        let ws = x.unfold(3, 3, 0).unwrap();
        assert_eq!(ws.fold().unwrap(), x);
    }

    #[test]
    fn conv_identity_1x1() {
        let x = ramp(&[3, 4, 4]);
        let w = Tensor::eye(3).reshape(&[3, 3, 1, 1]).unwrap();
        let y = x.conv2d(&w, &Tensor::zeros(&[3]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = x.conv2d(&w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_patch_embedding_geometry() {
        let (c, r, p) = (4, 3, 2);
        let x = Tensor::full(&[c, r * p, r * p], 0.5);
        let w = Tensor::full(&[c, c, r, r], 0.1);
        let y = x.conv2d(&w, &Tensor::zeros(&[c]), r).unwrap();
        assert_eq!(y.shape(), &[c, p, p]);
        assert_eq!(
            conv2d_macs(x.shape(), w.shape(), r).unwrap(),
            (p * p * r * r * c * c) as u64
        );
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = Tensor::from_fn(&[2, 5, 5], |i| ((i[0] * 7 + i[1] * 3 + i[2]) % 5) as f64 - 2.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| {
            (i[0] + 2 * i[1]) as f64 * 0.1 - (i[2] * i[3]) as f64 * 0.05
        });
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 0.0]).unwrap();
        let y = x.conv2d(&w, &b, 2).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        for co in 0..3 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = b.data()[co];
                    for ci in 0..2 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                acc +=
                                    w.at(&[co, ci, dy, dx]).unwrap() * x.at(&[ci, oy * 2 + dy, ox * 2 + dx]).unwrap();
                            }
                        }
                    }
                    assert!((y.at(&[co, oy, ox]).unwrap() - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_shape_mismatch() {
        let x = Tensor::zeros(&[2, 4, 4]);
        assert!(matches!(
            x.conv2d(&Tensor::zeros(&[1, 3, 1, 1]), &Tensor::zeros(&[1]), 1),
            Err(Error::Shape(_))
        ));
        assert!(x
            .conv2d(&Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[1]), 2)
            .is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = Tensor::full(&[5], 3.0).softmax(0).unwrap();
        assert!(u.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let s = Tensor::new(vec![2], vec![0.0, 3f64.ln()]).unwrap().softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let big = Tensor::new(vec![3], vec![1000.0, 1001.0, 999.0])
            .unwrap()
            .softmax(0)
            .unwrap();
        assert!(big.is_finite());
    }

    #[test]
    fn softmax_middle_axis() {
        let x = ramp(&[2, 3, 2]);
        let y = x.softmax(1).unwrap();
        for a in 0..2 {
            for c in 0..2 {
                let s: f64 = (0..3).map(|b| y.at(&[a, b, c]).unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        assert_eq!(a.matmul(&Tensor::eye(2)).unwrap(), a);
        let s = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let t = Tensor::new(vec![1, 1], vec![-2.0]).unwrap();
        assert_eq!(s.matmul(&t).unwrap().data(), &[-6.0]);
        assert!(a.matmul(&Tensor::zeros(&[3, 1])).is_err());
        assert_eq!(matmul_macs(&[4, 2, 3], &[4, 3, 5]).unwrap(), 4 * 2 * 5 * 3);
    }

    #[test]
    fn upsample_cases() {
        let c = Tensor::full(&[1, 1, 1], 2.5).bilinear_upsample(3, 7).unwrap();
        assert!(c.data().iter().all(|&v| v == 2.5));
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = x.bilinear_upsample(4, 4).unwrap();
        for r in 0..4 {
            let row: Vec<f64> = (0..4).map(|c| y.at(&[0, r, c]).unwrap()).collect();
            assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        }
        let z = ramp(&[2, 3, 4]);
        assert_eq!(z.bilinear_upsample(3, 4).unwrap(), z);
        assert!(matches!(z.bilinear_upsample(2, 4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn slice_and_concat() {
        let x = ramp(&[1, 1, 8]);
        assert_eq!(x.slice(2, 3, 4).unwrap().data(), &[3.0]);
        let left = x.slice(2, 0, 5).unwrap();
        let right = x.slice(2, 5, 8).unwrap();
        assert_eq!(Tensor::concat(&[&left, &right], 2).unwrap(), x);
        assert_eq!(Tensor::concat(&[&x], 1).unwrap(), x);
        assert!(matches!(x.slice(2, 4, 4), Err(Error::Index(_))));
        assert!(matches!(x.slice(2, 3, 9), Err(Error::Index(_))));
        assert!(Tensor::concat(&[&x, &ramp(&[1, 2, 8])], 2).is_err());
    }

    #[test]
    fn avg_pool_means() {
        let x = ramp(&[1, 2, 4]);
        let y = x.avg_pool(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[2.5, 4.5]);
    }

    #[test]
    fn linear_tokens() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert_eq!(x.linear(&w, &b).unwrap().data(), &[-0.5, -0.5]);
    }
}
