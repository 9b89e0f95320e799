//! Tape-based reverse-mode differentiation over the tensor kernels.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse exactly once.
//!
//! The graph also owns a [`CostCounter`]: every conv, linear map and matmul
//! adds its multiply-accumulate count as it runs, so a forward pass built on
//! a fresh graph doubles as an instrumented cost measurement.

mod check;

use std::collections::HashMap;

pub use check::{finite_diff, finite_diff_at, max_rel_error, rel_error};

use crate::cost::{CostCounter, MemKind};
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::maps::{self, GatherMap, SparseMap};
use crate::tensor::{self, MatmulDims, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Gather {
        x: Var,
        map: GatherMap,
    },
    Sparse {
        x: Var,
        map: SparseMap,
    },
    Reshape {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        cin: usize,
        cout: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        dims: MatmulDims,
    },
    Softmax {
        x: Var,
        split: (usize, usize, usize),
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    Sum {
        x: Var,
    },
    Opaque {
        name: String,
        inputs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    counter: CostCounter,
}

/// Gradients of a scalar with respect to the leaves of a graph.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    /// `None` when the leaf does not influence the output.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counter(&self) -> &CostCounter {
        &self.counter
    }

    pub fn record_mem(&mut self, kind: MemKind, elems: usize) {
        self.counter.record_mem(kind, elems as u64);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Inserts a value computed outside the tape. It has no derivative rule,
    /// so backpropagating through it fails with [`Error::Unsupported`].
    pub fn opaque(&mut self, name: &str, inputs: &[Var], value: Tensor) -> Var {
        self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
                inputs: inputs.to_vec(),
            },
        )
    }

    fn gather(&mut self, x: Var, map: GatherMap) -> Var {
        let value = self.value(x).gather(&map).expect("map built for this shape");
        self.push(value, Op::Gather { x, map })
    }

    fn sparse(&mut self, x: Var, map: SparseMap) -> Var {
        let value = Tensor::from_parts(map.out_shape.clone(), map.apply(self.value(x).data()));
        self.push(value, Op::Sparse { x, map })
    }

    pub fn slice(&mut self, x: Var, axis: usize, lo: usize, hi: usize) -> Result<Var> {
        let map = maps::slice(self.shape(x), axis, lo, hi)?;
        Ok(self.gather(x, map))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let map = maps::permute(self.shape(x), axes)?;
        Ok(self.gather(x, map))
    }

    pub fn pad_zero(&mut self, x: Var, margins: [usize; 4]) -> Result<Var> {
        let map = maps::pad_zero(self.shape(x), margins)?;
        Ok(self.gather(x, map))
    }

    /// Returns the `(N, k, k, C)` windows and the `(rows, cols)` grid.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<(Var, usize, usize)> {
        let (map, rows, cols) = maps::unfold(self.shape(x), kernel, stride, pad)?;
        Ok((self.gather(x, map), rows, cols))
    }

    pub fn fold(&mut self, windows: Var, rows: usize, cols: usize) -> Result<Var> {
        let map = maps::fold(self.shape(windows), rows, cols)?;
        Ok(self.gather(windows, map))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = xs.iter().map(|&v| self.shape(v)).collect();
        let out_shape = tensor::concat_shape(&shapes, axis)?;
        let datas: Vec<&[f64]> = xs.iter().map(|&v| self.value(v).data()).collect();
        let data = tensor::concat_raw(&datas, &shapes, axis, &out_shape);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat { xs: xs.to_vec(), axis },
        ))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let map = maps::upsample_bilinear(self.shape(x), out_h, out_w)?;
        Ok(self.sparse(x, map))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let map = maps::avg_pool(self.shape(x), k)?;
        Ok(self.sparse(x, map))
    }

    /// Convolution; its MACs are charged to the linear-mapping category.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (geom, out_shape) = tensor::conv_geom(self.shape(x), self.shape(w), self.shape(b), stride)?;
        let data = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        self.counter.macs_linear += geom.macs();
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Conv2d { x, w, b, geom }))
    }

    /// Token-wise linear map over the last axis; charged as linear MACs.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, cin, cout, out_shape) = tensor::linear_dims(self.shape(x), self.shape(w), self.shape(b))?;
        let data = tensor::linear_raw(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            rows,
            cin,
            cout,
        );
        self.counter.macs_linear += (rows * cin * cout) as u64;
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Linear {
                x,
                w,
                b,
                rows,
                cin,
                cout,
            },
        ))
    }

    /// Batched matmul; charged to the attention category (logits and
    /// weighted sums are its only callers).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = tensor::matmul_dims(self.shape(a), self.shape(b))?;
        let data = tensor::matmul_raw(self.value(a).data(), self.value(b).data(), &dims);
        self.counter.macs_attention += dims.macs();
        Ok(self.push(
            Tensor::from_parts(dims.out_shape.clone(), data),
            Op::Matmul { a, b, dims },
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let split = tensor::axis_split(self.shape(x), axis)?;
        let (o, l, i) = split;
        let value = Tensor::from_parts(self.shape(x).to_vec(), kernels::softmax(self.value(x).data(), o, l, i));
        Ok(self.push(value, Op::Softmax { x, split }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(value, Op::Scale { x, s })
    }

    /// Sum of all elements, shape `(1,)`.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    /// Reverse sweep from a scalar node. Returns gradients for every leaf
    /// that the scalar depends on; fan-out contributions accumulate.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != [1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar root of shape (1,), got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                slot => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {
                    out.grads
                        .insert(Var(idx), Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Gather { x, map } => acc(*x, map.scatter(&g, self.value(*x).len())),
                Op::Sparse { x, map } => acc(*x, map.scatter(&g, self.value(*x).len())),
                Op::Reshape { x } => acc(*x, g),
                Op::Concat { xs, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut parts: Vec<Vec<f64>> =
                        xs.iter().map(|&v| Vec::with_capacity(self.value(v).len())).collect();
                    let mut pos = 0;
                    for _ in 0..outer {
                        for (p, &v) in parts.iter_mut().zip(xs) {
                            let chunk = self.shape(v)[*axis] * inner;
                            p.extend_from_slice(&g[pos..pos + chunk]);
                            pos += chunk;
                        }
                    }
                    for (&v, p) in xs.iter().zip(parts) {
                        acc(v, p);
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (gx, gw, gb) = kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), &g, geom);
                    acc(*x, gx);
                    acc(*w, gw);
                    acc(*b, gb);
                }
                Op::Linear {
                    x,
                    w,
                    b,
                    rows,
                    cin,
                    cout,
                } => {
                    let (rows, cin, cout) = (*rows, *cin, *cout);
                    let mut gx = vec![0.0; rows * cin];
                    kernels::gemm_acc(&g, self.value(*w).data(), &mut gx, rows, cout, cin);
                    let mut gw = vec![0.0; cout * cin];
                    kernels::gemm_acc(
                        &kernels::transpose(&g, rows, cout),
                        self.value(*x).data(),
                        &mut gw,
                        cout,
                        rows,
                        cin,
                    );
                    let mut gb = vec![0.0; cout];
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc(*x, gx);
                    acc(*w, gw);
                    acc(*b, gb);
                }
                Op::Matmul { a, b, dims } => {
                    let (m, k, n) = (dims.m, dims.k, dims.n);
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    for bi in 0..dims.batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let asl = &va[bi * m * k..(bi + 1) * m * k];
                        let bsl = &vb[bi * k * n..(bi + 1) * k * n];
                        kernels::gemm_acc(
                            gs,
                            &kernels::transpose(bsl, k, n),
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                        kernels::gemm_acc(
                            &kernels::transpose(asl, m, k),
                            gs,
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Softmax { x, split } => {
                    let (o, l, i) = *split;
                    acc(*x, kernels::softmax_backward(node.value.data(), &g, o, l, i));
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul { a, b } => {
                    let ga = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale { x, s } => acc(*x, g.iter().map(|v| v * s).collect()),
                Op::Sum { x } => acc(*x, vec![g[0]; self.value(*x).len()]),
                Op::Opaque { name, inputs } => {
                    if !inputs.is_empty() {
                        return Err(Error::Unsupported(format!("no derivative rule for opaque op `{name}`")));
                    }
                }
            }
        }
        Ok(out)
    }
}
