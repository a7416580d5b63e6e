use std::sync::Arc;

use crate::kernels;
use crate::tensor::{broadcast_offsets, broadcast_shape, numel};
use crate::{DiffError, Result, Tensor};

/// Handle to a value recorded in a [`Graph`].
///
/// Handles are plain indices; using one with a graph other than the one
/// that produced it is a logic error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Broadcast(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Conv1dFixed {
        x: Var,
        kernel: Arc<[f64]>,
    },
    AxisMap {
        x: Var,
        axis: usize,
        matrix: Arc<Tensor>,
    },
    DepthwiseTemporalConv(Var, Var),
    SpatioTemporalConv(Var, Var),
    Conv2d(Var, Var),
    Softmax(Var),
    Scan(Var, Var),
    TemporalNormalize {
        x: Var,
        sigma: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Dynamically built computation record.
///
/// Nodes are appended in creation order, so every node's inputs precede it.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Additive constant used by [`Graph::temporal_normalize`] to guard the
/// division by a vanishing standard deviation.
pub const NORMALIZE_EPS: f64 = 1e-6;

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// A leaf that accumulates gradients.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(DiffError::ShapeMismatch {
            op: name,
            left: sa.clone(),
            right: sb.clone(),
        })?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(&sa, &out_shape);
            let ob = broadcast_offsets(&sb, &out_shape);
            oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Tensor::new(out_shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        self.push("div", t, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.map(a, |x| x * s);
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.map(a, |x| x + s);
        self.push("add_scalar", t, Op::Offset(a), &[a])
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x * x);
        self.push("square", t, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(DiffError::InvalidArgument("sqrt of a negative value".into()));
        }
        let t = self.map(a, f64::sqrt);
        self.push("sqrt", t, Op::Sqrt(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::exp);
        self.push("exp", t, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(DiffError::InvalidArgument("ln of a non-positive value".into()));
        }
        let t = self.map(a, f64::ln);
        self.push("ln", t, Op::Ln(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::abs);
        self.push("abs", t, Op::Abs(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, sigmoid);
        self.push("sigmoid", t, Op::Sigmoid(a), &[a])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x * sigmoid(x));
        self.push("silu", t, Op::Silu(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, softplus);
        self.push("softplus", t, Op::Softplus(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums out one axis. Reducing the only axis yields shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::InvalidArgument(format!(
                "sum_axis: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push("sum_axis", Tensor::new(out_shape, out)?, Op::SumAxis(a, axis), &[a])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(DiffError::InvalidArgument(format!(
                "transpose expects a 2-D value, got {s:?}"
            )));
        }
        let out = kernels::transpose(self.value(a).data(), s[0], s[1]);
        self.push("transpose", Tensor::new(vec![s[1], s[0]], out)?, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(a).to_vec();
        if numel(shape) != numel(&old) {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                left: old,
                right: shape.to_vec(),
            });
        }
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(a).to_vec();
        match broadcast_shape(&old, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(DiffError::ShapeMismatch {
                    op: "broadcast",
                    left: old,
                    right: shape.to_vec(),
                })
            }
        }
        let off = broadcast_offsets(&old, shape);
        let x = self.value(a).data();
        let data = off.iter().map(|&i| x[i]).collect();
        self.push("broadcast", Tensor::new(shape.to_vec(), data)?, Op::Broadcast(a), &[a])
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(DiffError::InvalidArgument(format!(
                "slice [{start}, {}) on axis {axis} out of range for shape {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.push(
            "slice",
            Tensor::new(out_shape, out)?,
            Op::Slice { x: a, axis, start },
            &[a],
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::InvalidArgument("concat of zero values".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(DiffError::InvalidArgument(format!(
                "concat axis {axis} out of range for shape {s0:?}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == s0.len()
                && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    left: s0,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = self.shape(*p)[axis];
                let x = self.value(*p).data();
                out.extend_from_slice(&x[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut out_shape = s0;
        out_shape[axis] = total;
        self.push(
            "concat",
            Tensor::new(out_shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Zero-padded "same" convolution with a fixed kernel along the last
    /// axis. The kernel is centered at index `len / 2`.
    pub fn conv1d_fixed(&mut self, a: Var, kernel: Arc<[f64]>) -> Result<Var> {
        if kernel.is_empty() {
            return Err(DiffError::InvalidArgument("empty convolution kernel".into()));
        }
        let shape = self.shape(a).to_vec();
        let t = *shape.last().expect("non-empty shape");
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks(t).zip(out.chunks_mut(t)) {
            kernels::conv_same(src, &kernel, dst);
        }
        self.push(
            "conv1d_fixed",
            Tensor::new(shape, out)?,
            Op::Conv1dFixed { x: a, kernel },
            &[a],
        )
    }

    /// Applies a fixed `[out, in]` matrix along one axis.
    pub fn axis_map(&mut self, a: Var, axis: usize, matrix: Arc<Tensor>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let ms = matrix.shape();
        if axis >= shape.len() || ms.len() != 2 || ms[1] != shape[axis] {
            return Err(DiffError::ShapeMismatch {
                op: "axis_map",
                left: shape,
                right: ms.to_vec(),
            });
        }
        let (out, out_shape) = kernels::axis_map(self.value(a).data(), &shape, axis, &matrix);
        self.push(
            "axis_map",
            Tensor::new(out_shape, out)?,
            Op::AxisMap { x: a, axis, matrix },
            &[a],
        )
    }

    /// Per-channel centered convolution over time: `x [T, C]`, `k [C, K]`.
    pub fn depthwise_temporal_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 2 || sk.len() != 2 || sx[1] != sk[0] {
            return Err(DiffError::ShapeMismatch {
                op: "depthwise_temporal_conv",
                left: sx,
                right: sk,
            });
        }
        let out = kernels::depthwise_forward(self.value(x).data(), self.value(k).data(), sx[0], sx[1], sk[1]);
        self.push(
            "depthwise_temporal_conv",
            Tensor::new(sx, out)?,
            Op::DepthwiseTemporalConv(x, k),
            &[x, k],
        )
    }

    /// Spatio-temporal convolution in time-last layout:
    /// `x [Ci, H, W, T]`, `k [Co, Ci, KH, KW, KT]` (odd extents), zero padded.
    pub fn spatiotemporal_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let ok = sx.len() == 4
            && sk.len() == 5
            && sk[1] == sx[0]
            && sk[2] % 2 == 1
            && sk[3] % 2 == 1
            && sk[4] % 2 == 1;
        if !ok {
            return Err(DiffError::ShapeMismatch {
                op: "spatiotemporal_conv",
                left: sx,
                right: sk,
            });
        }
        let geo = kernels::StGeometry::new(&sx, &sk);
        let out = kernels::st_conv_forward(self.value(x).data(), self.value(k).data(), &geo);
        let out_shape = vec![sk[0], sx[1], sx[2], sx[3]];
        self.push(
            "spatiotemporal_conv",
            Tensor::new(out_shape, out)?,
            Op::SpatioTemporalConv(x, k),
            &[x, k],
        )
    }

    /// Batched 2-D convolution: `x [N, Ci, H, W]`, `k [Co, Ci, KH, KW]`
    /// (odd extents), zero padded to the same size.
    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let ok = sx.len() == 4 && sk.len() == 4 && sk[1] == sx[1] && sk[2] % 2 == 1 && sk[3] % 2 == 1;
        if !ok {
            return Err(DiffError::ShapeMismatch {
                op: "conv2d",
                left: sx,
                right: sk,
            });
        }
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), &sx, &sk);
        let out_shape = vec![sx[0], sk[0], sx[2], sx[3]];
        self.push("conv2d", Tensor::new(out_shape, out)?, Op::Conv2d(x, k), &[x, k])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().expect("non-empty shape");
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push("softmax", Tensor::new(shape, out)?, Op::Softmax(a), &[a])
    }

    /// Linear recurrence along axis 0:
    /// `out[t] = decay[t] * out[t-1] + drive[t]`, `out[-1] = 0`.
    pub fn scan(&mut self, decay: Var, drive: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(decay).to_vec(), self.shape(drive).to_vec());
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op: "scan",
                left: sa,
                right: sb,
            });
        }
        let steps = sa[0];
        let width = numel(&sa) / steps;
        let out = kernels::scan_forward(self.value(decay).data(), self.value(drive).data(), steps, width);
        self.push("scan", Tensor::new(sa, out)?, Op::Scan(decay, drive), &[decay, drive])
    }

    /// Per-column detrending and variance normalization along axis 0:
    /// subtracts the least-squares line over time, then divides by the
    /// residual standard deviation plus [`NORMALIZE_EPS`].
    pub fn temporal_normalize(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let steps = shape[0];
        if steps < 2 {
            return Err(DiffError::InvalidArgument(
                "temporal_normalize needs at least two time steps".into(),
            ));
        }
        let width = numel(&shape) / steps;
        let (out, sigma) = kernels::temporal_normalize(self.value(a).data(), steps, width);
        self.push(
            "temporal_normalize",
            Tensor::new(shape, out)?,
            Op::TemporalNormalize { x: a, sigma },
            &[a],
        )
    }

    /// Propagates gradients from a scalar `root` back to every leaf that
    /// requires them. Repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rs = self.shape(root);
        if numel(rs) != 1 {
            return Err(DiffError::NonScalarRoot(rs.to_vec()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(g), true) = (g, matches!(self.nodes[i].op, Op::Leaf)) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let out_shape = node.value.shape();
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let n = self.nodes[v.0].value.len();
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let oa = broadcast_offsets(shp(*a), out_shape);
                let ob = broadcast_offsets(shp(*b), out_shape);
                acc(*a, &mut |ga| {
                    for (k, &o) in oa.iter().enumerate() {
                        ga[o] += g[k];
                    }
                });
                acc(*b, &mut |gb| {
                    for (k, &o) in ob.iter().enumerate() {
                        gb[o] += sign * g[k];
                    }
                });
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let oa = broadcast_offsets(shp(*a), out_shape);
                let ob = broadcast_offsets(shp(*b), out_shape);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        let y = vb[ob[k]];
                        ga[oa[k]] += if is_div { g[k] / y } else { g[k] * y };
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..g.len() {
                        let x = va[oa[k]];
                        let y = vb[ob[k]];
                        gb[ob[k]] += if is_div { -g[k] * x / (y * y) } else { g[k] * x };
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| axpy(ga, g, *s)),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, &mut |ga| axpy(ga, g, 1.0)),
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += 2.0 * x[k] * g[k];
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |ga| {
                for k in 0..g.len() {
                    if out[k] > 0.0 {
                        ga[k] += g[k] * 0.5 / out[k];
                    }
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * out[k];
                }
            }),
            Op::Ln(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] / x[k];
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * sign(x[k]);
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Silu(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        let s = sigmoid(x[k]);
                        ga[k] += g[k] * (s + x[k] * s * (1.0 - s));
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * sigmoid(x[k]);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::SumAxis(a, axis) => {
                let s = shp(*a);
                let outer: usize = s[..*axis].iter().product();
                let n = s[*axis];
                let inner: usize = s[*axis + 1..].iter().product();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for k in 0..n {
                            axpy(&mut ga[(o * n + k) * inner..(o * n + k + 1) * inner], src, 1.0);
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (shp(*a), shp(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| kernels::matmul_grad_a(g, vb, ga, m, k, n));
                acc(*b, &mut |gb| kernels::matmul_grad_b(va, g, gb, m, k, n));
            }
            Op::Transpose(a) => {
                let s = shp(*a);
                let t = kernels::transpose(g, s[1], s[0]);
                acc(*a, &mut |ga| axpy(ga, &t, 1.0));
            }
            Op::Broadcast(a) => {
                let off = broadcast_offsets(shp(*a), out_shape);
                acc(*a, &mut |ga| {
                    for (k, &o) in off.iter().enumerate() {
                        ga[o] += g[k];
                    }
                });
            }
            Op::Slice { x, axis, start } => {
                let s = shp(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let len = out_shape[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = (o * s[*axis] + start) * inner;
                        axpy(
                            &mut gx[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                            1.0,
                        );
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for p in parts {
                    let n = shp(*p)[*axis];
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(
                                &mut gp[o * n * inner..(o + 1) * n * inner],
                                &g[src..src + n * inner],
                                1.0,
                            );
                        }
                    });
                    offset += n;
                }
            }
            Op::Conv1dFixed { x, kernel } => {
                let t = *out_shape.last().expect("non-empty");
                acc(*x, &mut |gx| {
                    for (src, dst) in g.chunks(t).zip(gx.chunks_mut(t)) {
                        kernels::conv_same_adjoint(src, kernel, dst);
                    }
                });
            }
            Op::AxisMap { x, axis, matrix } => {
                let s = shp(*x).to_vec();
                acc(*x, &mut |gx| kernels::axis_map_adjoint(g, &s, *axis, matrix, gx));
            }
            Op::DepthwiseTemporalConv(x, k) => {
                let (sx, sk) = (shp(*x), shp(*k));
                let (t, c, kl) = (sx[0], sx[1], sk[1]);
                let (vx, vk) = (val(*x), val(*k));
                acc(*x, &mut |gx| kernels::depthwise_grad_x(g, vk, gx, t, c, kl));
                acc(*k, &mut |gk| kernels::depthwise_grad_k(g, vx, gk, t, c, kl));
            }
            Op::SpatioTemporalConv(x, k) => {
                let geo = kernels::StGeometry::new(shp(*x), shp(*k));
                let (vx, vk) = (val(*x), val(*k));
                acc(*x, &mut |gx| kernels::st_conv_grad_x(g, vk, gx, &geo));
                acc(*k, &mut |gk| kernels::st_conv_grad_k(g, vx, gk, &geo));
            }
            Op::Conv2d(x, k) => {
                let (sx, sk) = (shp(*x).to_vec(), shp(*k).to_vec());
                let (vx, vk) = (val(*x), val(*k));
                acc(*x, &mut |gx| kernels::conv2d_grad_x(g, vk, gx, &sx, &sk));
                acc(*k, &mut |gk| kernels::conv2d_grad_k(g, vx, gk, &sx, &sk));
            }
            Op::Softmax(a) => {
                let n = *out_shape.last().expect("non-empty");
                acc(*a, &mut |ga| {
                    for ((y, gy), gx) in out.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::Scan(decay, drive) => {
                let steps = out_shape[0];
                let width = out.len() / steps;
                let total = kernels::scan_adjoint(val(*decay), g, steps, width);
                acc(*drive, &mut |gb| axpy(gb, &total, 1.0));
                acc(*decay, &mut |ga| {
                    for t in 1..steps {
                        for c in 0..width {
                            ga[t * width + c] += total[t * width + c] * out[(t - 1) * width + c];
                        }
                    }
                });
            }
            Op::TemporalNormalize { x, sigma } => {
                let steps = out_shape[0];
                let width = out.len() / steps;
                acc(*x, &mut |gx| kernels::temporal_normalize_adjoint(g, out, sigma, steps, width, gx));
            }
        }
        Ok(())
    }
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
