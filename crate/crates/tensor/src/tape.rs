//! Reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its materialized value and whatever
//! it needs for the backward pass. Parents always precede their children, so
//! a reverse sweep over the node list is a reverse topological order and
//! visits every node exactly once.

use crate::error::{Result, TensorError};
use crate::tensor::{broadcast_strides, check_permutation, contiguous_strides, for_each_strided, Tensor};

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Gradient flows to a single maximal element per reduced group, the one
    /// with the lowest flat index on ties.
    Max,
}

/// Per-channel batch-normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen statistics.
    Eval(&'a BatchStats),
}

/// Variance offset inside batch normalization.
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ChannelLinear {
        x: Var,
        w: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    BroadcastTo(Var),
    Reshape(Var),
    Reduce {
        x: Var,
        /// Keep-dims shape of the result.
        kept: Vec<usize>,
        kind: Reduction,
        /// For `Max`: flat input index chosen for every output element.
        argmax: Vec<usize>,
    },
    Relu(Var),
    Softplus(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        train: bool,
        stats: BatchStats,
    },
    DiagMask {
        x: Var,
        axes: (usize, usize),
    },
    Transpose {
        x: Var,
        perm: Vec<usize>,
    },
    LogSumExp {
        x: Var,
        kept: Vec<usize>,
    },
    Select {
        x: Var,
        axis: usize,
        index: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    External {
        x: Var,
        grad: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of every node that the loss depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The gradient of a node, `None` if the loss does not depend on it or
    /// it does not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], with zeros for unreached nodes.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

/// Append-only record of a computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn finite(name: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFiniteDetected(name))
    }
}

fn check_axis(axis: usize, rank: usize, op: &str) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::ShapeMismatch(format!(
            "{op}: axis {axis} out of range for rank {rank}"
        )));
    }
    Ok(())
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(outer, extent, inner)` sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
/// Whether a channel contraction should fold the outer axes into one
/// matrix product instead of one small product per outer index.
fn fold_outer(outer: usize, inner: usize) -> bool {
    outer > 1 && inner < 256
}

/// `[outer, c, inner]` to `[c, outer * inner]`.
fn to_channel_major(x: &[f64], outer: usize, c: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for ch in 0..c {
            let src = &x[(o * c + ch) * inner..(o * c + ch + 1) * inner];
            out[(ch * outer + o) * inner..(ch * outer + o + 1) * inner].copy_from_slice(src);
        }
    }
    out
}

/// `[c, outer * inner]` to `[outer, c, inner]`.
fn from_channel_major(x: &[f64], outer: usize, c: usize, inner: usize, out: &mut [f64]) {
    for o in 0..outer {
        for ch in 0..c {
            let src = &x[(ch * outer + o) * inner..(ch * outer + o + 1) * inner];
            out[(o * c + ch) * inner..(o * c + ch + 1) * inner].copy_from_slice(src);
        }
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches inside the
    // three slices; c is exclusively borrowed and rows of c do not overlap.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is tracked (a parameter or a probed input).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        let value = finite("leaf", value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        let value = finite("constant", value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = finite("add", Tensor::new(va.shape().to_vec(), data)?)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Sum of several same-shaped tensors.
    pub fn add_many(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| TensorError::ShapeMismatch("add_many of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = finite("mul", Tensor::new(va.shape().to_vec(), data)?)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = finite("scale", self.value(x).map(|v| v * factor))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Scale(x, factor), rg))
    }

    /// Contracts `x` along `axis` with `w[c_out, c_in]`: the output has
    /// extent `c_out` along `axis`.
    pub fn channel_linear(&mut self, x: Var, w: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_axis(axis, xs.len(), "channel_linear")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != xs[axis] {
            return Err(TensorError::ShapeMismatch(format!(
                "channel_linear: weight {ws:?} for input {xs:?} on axis {axis}"
            )));
        }
        let (outer, c_in, inner) = split_axis(&xs, axis);
        let c_out = ws[0];
        let mut out_shape = xs.clone();
        out_shape[axis] = c_out;
        let mut data = vec![0.0; outer * c_out * inner];
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        if fold_outer(outer, inner) {
            let xt = to_channel_major(xv, outer, c_in, inner);
            let mut ot = vec![0.0; c_out * outer * inner];
            gemm(c_out, c_in, outer * inner, wv, (c_in, 1), &xt, (outer * inner, 1), 0.0, &mut ot);
            from_channel_major(&ot, outer, c_out, inner, &mut data);
        } else {
            for o in 0..outer {
                gemm(
                    c_out,
                    c_in,
                    inner,
                    wv,
                    (c_in, 1),
                    &xv[o * c_in * inner..(o + 1) * c_in * inner],
                    (inner, 1),
                    0.0,
                    &mut data[o * c_out * inner..(o + 1) * c_out * inner],
                );
            }
        }
        let value = finite("channel_linear", Tensor::new(out_shape, data)?)?;
        let rg = self.needs(&[x, w]);
        Ok(self.push(value, Op::ChannelLinear { x, w, axis }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::ShapeMismatch("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis(axis, base.len(), "concat")?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch(format!("concat: {s:?} vs {base:?}")));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                data.extend_from_slice(&self.value(v).data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        let rg = self.needs(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Stacks same-shaped tensors along a new axis.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let expanded = inputs
            .iter()
            .map(|&v| {
                let mut s = self.shape(v).to_vec();
                if axis > s.len() {
                    return Err(TensorError::ShapeMismatch(format!("stack: axis {axis}")));
                }
                s.insert(axis, 1);
                self.reshape(v, &s)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&expanded, axis)
    }

    /// Expands extent-1 axes to `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs == shape {
            return Ok(x);
        }
        let strides = broadcast_strides(&xs, shape)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; shape.iter().product()];
        for_each_strided(shape, &strides, |i, j| data[i] = src[j]);
        let value = Tensor::new(shape.to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::BroadcastTo(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reduces over the listed axes.
    pub fn reduce(&mut self, x: Var, axes: &[usize], kind: Reduction, keepdims: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        for &a in axes {
            check_axis(a, xs.len(), "reduce")?;
        }
        let kept: Vec<usize> = xs
            .iter()
            .enumerate()
            .map(|(i, &n)| if axes.contains(&i) { 1 } else { n })
            .collect();
        let out_strides: Vec<usize> = contiguous_strides(&kept)
            .into_iter()
            .zip(&kept)
            .map(|(s, &n)| if n == 1 { 0 } else { s })
            .collect();
        let out_len: usize = kept.iter().product();
        let group: usize = axes.iter().map(|&a| xs[a]).product();
        let src = self.value(x).data();
        let mut data;
        let mut argmax = Vec::new();
        match kind {
            Reduction::Sum | Reduction::Mean => {
                data = vec![0.0; out_len];
                for_each_strided(&xs, &out_strides, |i, j| data[j] += src[i]);
                if kind == Reduction::Mean {
                    let inv = 1.0 / group as f64;
                    data.iter_mut().for_each(|v| *v *= inv);
                }
            }
            Reduction::Max => {
                data = vec![f64::NEG_INFINITY; out_len];
                argmax = vec![usize::MAX; out_len];
                for_each_strided(&xs, &out_strides, |i, j| {
                    if src[i] > data[j] || argmax[j] == usize::MAX {
                        data[j] = src[i];
                        argmax[j] = i;
                    }
                });
            }
        }
        let mut shape = kept.clone();
        if !keepdims {
            shape = xs
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &n)| n)
                .collect();
        }
        let value = finite("reduce", Tensor::new(shape, data)?)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reduce { x, kept, kind, argmax }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, &axes, Reduction::Sum, false)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let value = finite("softplus", self.value(x).map(stable_softplus))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Softplus(x), rg))
    }

    /// Per-channel normalization over every axis except axis 1, followed by
    /// the learned affine map `gamma * xhat + beta`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_axis(1, xs.len(), "batchnorm")?;
        let c = xs[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::ShapeMismatch(format!(
                "batchnorm: {c} channels, scale {:?}, shift {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (outer, _, inner) = split_axis(&xs, 1);
        let src = self.value(x).data();
        let count = (outer * inner) as f64;
        let stats = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for o in 0..outer {
                    for (ch, m) in mean.iter_mut().enumerate() {
                        let base = (o * c + ch) * inner;
                        *m += src[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        var[ch] += src[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                BatchStats { mean, var }
            }
            BatchNormMode::Eval(stats) => {
                if stats.mean.len() != c || stats.var.len() != c {
                    return Err(TensorError::ShapeMismatch("batchnorm: frozen stats".into()));
                }
                stats.clone()
            }
        };
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (src[i] - stats.mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let value = finite("batchnorm", Tensor::new(xs.clone(), out)?)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::new(xs, xhat)?,
                inv_std,
                train: matches!(mode, BatchNormMode::Train),
                stats,
            },
            rg,
        ))
    }

    /// The statistics a batch-norm node normalized with.
    pub fn batch_stats(&self, var: Var) -> Option<&BatchStats> {
        match &self.nodes[var.0].op {
            Op::BatchNorm { stats, .. } => Some(stats),
            _ => None,
        }
    }

    /// Zeroes the entries whose indices along the two axes coincide.
    pub fn diag_mask(&mut self, x: Var, axis_a: usize, axis_b: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_axis(axis_a, xs.len(), "diag_mask")?;
        check_axis(axis_b, xs.len(), "diag_mask")?;
        if axis_a == axis_b || xs[axis_a] != xs[axis_b] {
            return Err(TensorError::ShapeMismatch(format!(
                "diag_mask: axes {axis_a}, {axis_b} of {xs:?}"
            )));
        }
        let mut value = self.value(x).clone();
        apply_diag_mask(&mut value, axis_a, axis_b);
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::DiagMask {
                x,
                axes: (axis_a, axis_b),
            },
            rg,
        ))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn transpose(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        check_permutation(perm, self.shape(x).len())?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(x);
        }
        let value = self.value(x).transposed(perm)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Transpose {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// `log sum exp` over the listed axes, max-subtracted.
    pub fn logsumexp(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let max = self.reduce_value(x, axes, Reduction::Max)?;
        let kept = max.shape().to_vec();
        let strides = broadcast_strides(&kept, &xs)?;
        let src = self.value(x).data();
        let mut sums = vec![0.0; max.len()];
        for_each_strided(&xs, &strides, |i, j| sums[j] += (src[i] - max.data()[j]).exp());
        let data: Vec<f64> = sums.iter().zip(max.data()).map(|(s, m)| m + s.ln()).collect();
        let shape = if keepdims {
            kept.clone()
        } else {
            xs.iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &n)| n)
                .collect()
        };
        let value = finite("logsumexp", Tensor::new(shape, data)?)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::LogSumExp { x, kept }, rg))
    }

    fn reduce_value(&self, x: Var, axes: &[usize], kind: Reduction) -> Result<Tensor> {
        let mut scratch = Tape::new();
        let v = scratch.constant(self.value(x).clone())?;
        let r = scratch.reduce(v, axes, kind, true)?;
        Ok(scratch.nodes.swap_remove(r.0).value)
    }

    /// The slice at `index` along `axis`, which is removed.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_axis(axis, xs.len(), "select")?;
        if index >= xs[axis] {
            return Err(TensorError::ShapeMismatch(format!(
                "select: index {index} past extent {}",
                xs[axis]
            )));
        }
        let (outer, ext, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * ext + index) * inner;
            data.extend_from_slice(&src[base..base + inner]);
        }
        let mut shape = xs;
        shape.remove(axis);
        let value = Tensor::new(shape, data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Select { x, axis, index }, rg))
    }

    /// The `len` consecutive slices starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_axis(axis, xs.len(), "narrow")?;
        if start + len > xs[axis] {
            return Err(TensorError::ShapeMismatch(format!(
                "narrow: {start}..{} past extent {}",
                start + len,
                xs[axis]
            )));
        }
        if start == 0 && len == xs[axis] {
            return Ok(x);
        }
        let (outer, ext, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Narrow { x, axis, start }, rg))
    }

    /// A scalar node standing for an externally computed loss whose
    /// gradient with respect to `x` is `grad`. Its value is `sum(x * grad)`,
    /// which has exactly that gradient.
    pub fn external(&mut self, x: Var, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(TensorError::ShapeMismatch(format!(
                "external: gradient {:?} for value {:?}",
                grad.shape(),
                self.shape(x)
            )));
        }
        let grad = finite("external", grad)?;
        let v: f64 = self.value(x).data().iter().zip(grad.data()).map(|(a, b)| a * b).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(finite("external", Tensor::scalar(v))?, Op::External { x, grad }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "backward from a non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |var: Var, delta: Tensor| {
            assert!(var.0 < id, "tape parents precede children");
            if !self.nodes[var.0].requires_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(delta.data())
                    .for_each(|(a, b)| *a += b),
                slot => *slot = Some(delta),
            }
        };
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_with(g, vb, |g, y| g * y));
                acc(*b, zip_with(g, va, |g, x| g * x));
            }
            Op::Scale(x, f) => acc(*x, g.map(|v| v * f)),
            Op::ChannelLinear { x, w, axis } => {
                let xs = self.shape(*x);
                let (outer, c_in, inner) = split_axis(xs, *axis);
                let c_out = self.shape(*w)[0];
                let (xv, wv, gv) = (self.value(*x).data(), self.value(*w).data(), g.data());
                if fold_outer(outer, inner) {
                    let m = outer * inner;
                    let gt = to_channel_major(gv, outer, c_out, inner);
                    if self.nodes[x.0].requires_grad {
                        let mut dxt = vec![0.0; c_in * m];
                        gemm(c_in, c_out, m, wv, (1, c_in), &gt, (m, 1), 0.0, &mut dxt);
                        let mut dx = vec![0.0; xv.len()];
                        from_channel_major(&dxt, outer, c_in, inner, &mut dx);
                        acc(*x, Tensor::new(xs.to_vec(), dx)?);
                    }
                    if self.nodes[w.0].requires_grad {
                        let xt = to_channel_major(xv, outer, c_in, inner);
                        let mut dw = vec![0.0; c_out * c_in];
                        gemm(c_out, m, c_in, &gt, (m, 1), &xt, (1, m), 0.0, &mut dw);
                        acc(*w, Tensor::new(vec![c_out, c_in], dw)?);
                    }
                    return Ok(());
                }
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; xv.len()];
                    for o in 0..outer {
                        gemm(
                            c_in,
                            c_out,
                            inner,
                            wv,
                            (1, c_in),
                            &gv[o * c_out * inner..(o + 1) * c_out * inner],
                            (inner, 1),
                            0.0,
                            &mut dx[o * c_in * inner..(o + 1) * c_in * inner],
                        );
                    }
                    acc(*x, Tensor::new(xs.to_vec(), dx)?);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; c_out * c_in];
                    for o in 0..outer {
                        gemm(
                            c_out,
                            inner,
                            c_in,
                            &gv[o * c_out * inner..(o + 1) * c_out * inner],
                            (inner, 1),
                            &xv[o * c_in * inner..(o + 1) * c_in * inner],
                            (1, inner),
                            1.0,
                            &mut dw,
                        );
                    }
                    acc(*w, Tensor::new(vec![c_out, c_in], dw)?);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let ext = self.shape(v)[*axis];
                    let mut d = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + ext * inner]);
                    }
                    acc(v, Tensor::new(self.shape(v).to_vec(), d)?);
                    offset += ext;
                }
            }
            Op::BroadcastTo(x) => {
                let xs = self.shape(*x);
                let strides = broadcast_strides(xs, g.shape())?;
                let mut d = vec![0.0; self.value(*x).len()];
                for_each_strided(g.shape(), &strides, |i, j| d[j] += g.data()[i]);
                acc(*x, Tensor::new(xs.to_vec(), d)?);
            }
            Op::Reshape(x) => acc(*x, g.clone().reshaped(self.shape(*x))?),
            Op::Reduce { x, kept, kind, argmax } => {
                let xs = self.shape(*x);
                let mut d = vec![0.0; self.value(*x).len()];
                match kind {
                    Reduction::Max => {
                        for (j, &i) in argmax.iter().enumerate() {
                            d[i] += g.data()[j];
                        }
                    }
                    Reduction::Sum | Reduction::Mean => {
                        let strides = broadcast_strides(kept, xs)?;
                        let scale = if *kind == Reduction::Mean {
                            kept.iter().product::<usize>() as f64 / xs.iter().product::<usize>() as f64
                        } else {
                            1.0
                        };
                        for_each_strided(xs, &strides, |i, j| d[i] = g.data()[j] * scale);
                    }
                }
                acc(*x, Tensor::new(xs.to_vec(), d)?);
            }
            Op::Relu(x) => acc(*x, zip_with(g, self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 })),
            Op::Softplus(x) => acc(*x, zip_with(g, self.value(*x), |g, v| g * sigmoid(v))),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                ..
            } => {
                let xs = self.shape(*x);
                let c = xs[1];
                let (outer, _, inner) = split_axis(xs, 1);
                let (gd, xh, gam) = (g.data(), xhat.data(), self.value(*gamma).data());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            dgamma[ch] += gd[i] * xh[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let count = (outer * inner) as f64;
                    let mut dx = vec![0.0; gd.len()];
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            for i in base..base + inner {
                                dx[i] = if *train {
                                    gam[ch] * inv_std[ch] * (gd[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count)
                                } else {
                                    gam[ch] * inv_std[ch] * gd[i]
                                };
                            }
                        }
                    }
                    acc(*x, Tensor::new(xs.to_vec(), dx)?);
                }
                acc(*gamma, Tensor::new(vec![c], dgamma)?);
                acc(*beta, Tensor::new(vec![c], dbeta)?);
            }
            Op::DiagMask { x, axes } => {
                let mut d = g.clone();
                apply_diag_mask(&mut d, axes.0, axes.1);
                acc(*x, d);
            }
            Op::Transpose { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                acc(*x, g.transposed(&inverse)?);
            }
            Op::LogSumExp { x, kept } => {
                let xs = self.shape(*x);
                let strides = broadcast_strides(kept, xs)?;
                let (src, out) = (self.value(*x).data(), node.value.data());
                let mut d = vec![0.0; src.len()];
                for_each_strided(xs, &strides, |i, j| d[i] = g.data()[j] * (src[i] - out[j]).exp());
                acc(*x, Tensor::new(xs.to_vec(), d)?);
            }
            Op::Select { x, axis, index } => {
                let xs = self.shape(*x);
                let (outer, ext, inner) = split_axis(xs, *axis);
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let base = (o * ext + index) * inner;
                    d[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
                acc(*x, Tensor::new(xs.to_vec(), d)?);
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, ext, inner) = split_axis(xs, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, Tensor::new(xs.to_vec(), d)?);
            }
            Op::External { x, grad } => {
                let s = g.item();
                acc(*x, grad.map(|v| v * s));
            }
        }
        Ok(())
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shapes")
}

fn apply_diag_mask(t: &mut Tensor, axis_a: usize, axis_b: usize) {
    let shape = t.shape().to_vec();
    let strides = contiguous_strides(&shape);
    // Walk every element of the diagonal plane: iterate the shape with the
    // b-axis collapsed, stepping both diagonal axes together.
    let mut plane = shape.clone();
    plane[axis_b] = 1;
    let mut plane_strides = strides.clone();
    plane_strides[axis_a] += strides[axis_b];
    plane_strides[axis_b] = 0;
    let data = t.data_mut();
    for_each_strided(&plane, &plane_strides, |_, j| data[j] = 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Builds `sum(f(inputs) * probe)` for a fixed probe and compares the
    /// tape gradient of every input against central differences.
    fn check_gradients(
        inputs: &[Tensor],
        build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    ) -> std::result::Result<(), String> {
        let h = 1e-5;
        let eval = |inputs: &[Tensor], probe: Option<&Tensor>| -> (f64, Tape, Vec<Var>, Var, Tensor) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
            let out = build(&mut tape, &vars).unwrap();
            let probe = probe.cloned().unwrap_or_else(|| Tensor::from_fn(tape.shape(out), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4));
            let loss = tape.external(out, probe.clone()).unwrap();
            (tape.value(loss).item(), tape, vars, loss, probe)
        };
        let (_, tape, vars, loss, probe) = eval(inputs, None);
        let grads = tape.backward(loss).map_err(|e| e.to_string())?;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(&tape, vars[k]);
            for i in 0..input.len() {
                let mut up = inputs.to_vec();
                let mut down = inputs.to_vec();
                up[k].data_mut()[i] += h;
                down[k].data_mut()[i] -= h;
                let fd = (eval(&up, Some(&probe)).0 - eval(&down, Some(&probe)).0) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
                if err > 1e-4 {
                    return Err(format!("input {k} entry {i}: analytic {a}, finite difference {fd}"));
                }
            }
        }
        Ok(())
    }

    fn trials(name: &str, shapes: &[&[usize]], build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7 + 1);
        for trial in 0..100 {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            if let Err(e) = check_gradients(&inputs, build) {
                panic!("{name}, trial {trial}: {e}");
            }
        }
    }

    #[test]
    fn gradient_add_mul_scale() {
        trials("add", &[&[2, 3], &[2, 3]], &|t, v| t.add(v[0], v[1]));
        trials("mul", &[&[3, 2], &[3, 2]], &|t, v| t.mul(v[0], v[1]));
        trials("scale", &[&[4]], &|t, v| t.scale(v[0], -2.5));
    }

    #[test]
    fn gradient_channel_linear() {
        trials("channel_linear", &[&[2, 3, 4], &[5, 3]], &|t, v| t.channel_linear(v[0], v[1], 1));
        trials("channel_linear_last", &[&[2, 3], &[2, 3]], &|t, v| t.channel_linear(v[0], v[1], 1));
    }

    #[test]
    fn gradient_concat_broadcast_reshape() {
        trials("concat", &[&[2, 1, 3], &[2, 2, 3]], &|t, v| t.concat(&[v[0], v[1]], 1));
        trials("stack", &[&[2, 3], &[2, 3]], &|t, v| t.stack(&[v[0], v[1]], 1));
        trials("broadcast", &[&[2, 1, 3, 1]], &|t, v| t.broadcast_to(v[0], &[2, 4, 3, 2]));
        trials("reshape", &[&[2, 6]], &|t, v| t.reshape(v[0], &[3, 4]));
    }

    #[test]
    fn gradient_reductions() {
        trials("sum", &[&[2, 3, 4]], &|t, v| t.reduce(v[0], &[0, 2], Reduction::Sum, true));
        trials("mean", &[&[2, 3, 4]], &|t, v| t.reduce(v[0], &[1], Reduction::Mean, false));
        trials("max", &[&[3, 4, 2]], &|t, v| t.reduce(v[0], &[1, 2], Reduction::Max, true));
        trials("logsumexp", &[&[3, 4]], &|t, v| t.logsumexp(v[0], &[1], true));
        trials("logsumexp_all", &[&[2, 2, 3]], &|t, v| t.logsumexp(v[0], &[0, 1, 2], false));
    }

    #[test]
    fn gradient_nonlinearities() {
        trials("relu", &[&[5, 3]], &|t, v| t.relu(v[0]));
        trials("softplus", &[&[5, 3]], &|t, v| t.softplus(v[0]));
    }

    #[test]
    fn gradient_batchnorm() {
        trials("batchnorm_train", &[&[4, 3, 2], &[3], &[3]], &|t, v| {
            t.batchnorm(v[0], v[1], v[2], BatchNormMode::Train)
        });
        let stats = BatchStats {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![0.5, 1.5, 2.0],
        };
        trials("batchnorm_eval", &[&[4, 3, 2], &[3], &[3]], &|t, v| {
            t.batchnorm(v[0], v[1], v[2], BatchNormMode::Eval(&stats))
        });
    }

    #[test]
    fn gradient_structural_ops() {
        trials("diag_mask", &[&[2, 3, 3]], &|t, v| t.diag_mask(v[0], 1, 2));
        trials("transpose", &[&[2, 3, 4]], &|t, v| t.transpose(v[0], &[2, 0, 1]));
        trials("select", &[&[2, 3, 4]], &|t, v| t.select(v[0], 1, 2));
        trials("narrow", &[&[2, 5, 3]], &|t, v| t.narrow(v[0], 1, 1, 3));
        trials("external", &[&[3]], &|t, v| {
            let e = t.external(v[0], Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())?;
            t.scale(e, 3.0)
        });
    }

    #[test]
    fn gradient_composite_graph() {
        trials("composite", &[&[3, 2, 2], &[4, 2], &[4], &[4]], &|t, v| {
            let h = t.channel_linear(v[0], v[1], 1)?;
            let n = t.batchnorm(h, v[2], v[3], BatchNormMode::Train)?;
            let p = t.reduce(n, &[2], Reduction::Mean, true)?;
            let b = t.broadcast_to(p, &[3, 4, 2])?;
            let s = t.add(n, b)?;
            t.softplus(s)
        });
    }

    #[test]
    fn reduce_mean_example_and_equivariance() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let m = t.reduce(x, &[1], Reduction::Mean, false).unwrap();
        assert_eq!(t.value(m).data(), &[1.5, 3.5]);
        let xp = t.constant(Tensor::new(vec![2, 2], vec![3.0, 4.0, 1.0, 2.0]).unwrap()).unwrap();
        let mp = t.reduce(xp, &[1], Reduction::Mean, false).unwrap();
        assert_eq!(t.value(mp).data(), &[3.5, 1.5]);
    }

    #[test]
    fn softplus_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let y = t.softplus(x).unwrap();
        assert!((t.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let s = t.sum_all(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.5);
    }

    #[test]
    fn max_routes_to_first_maximum() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 4], vec![2.0, 5.0, 5.0, 1.0]).unwrap()).unwrap();
        let m = t.reduce(x, &[1], Reduction::Max, false).unwrap();
        let s = t.sum_all(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn squared_linear_output_gradient() {
        // f(W) = |W x|^2 has gradient 2 (W x) x^T.
        let mut t = Tape::new();
        let w = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap()).unwrap();
        let x = t.constant(Tensor::new(vec![2, 1], vec![3.0, -2.0]).unwrap()).unwrap();
        let y = t.channel_linear(x, w, 0).unwrap();
        let sq = t.mul(y, y).unwrap();
        let loss = t.sum_all(sq).unwrap();
        let g = t.backward(loss).unwrap();
        let wx = [1.0 * 3.0 + 2.0 * -2.0, -1.0 * 3.0 + 0.5 * -2.0];
        let expected = [2.0 * wx[0] * 3.0, 2.0 * wx[0] * -2.0, 2.0 * wx[1] * 3.0, 2.0 * wx[1] * -2.0];
        assert_eq!(g.get(w).unwrap().data(), &expected);
    }

    #[test]
    fn constant_branch_gets_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::full(&[2], 1.0)).unwrap();
        let c = t.constant(Tensor::full(&[2], 3.0)).unwrap();
        let c2 = t.scale(c, 2.0).unwrap();
        let s = t.add(a, c2).unwrap();
        let l = t.sum_all(s).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(c2).is_none());
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);

        let unused = t.leaf(Tensor::full(&[2], 1.0)).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn relu_identity_region_matches_linear() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.5, 0.25, 2.0]).unwrap()).unwrap();
        let x = t.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        let y = t.channel_linear(x, w, 0).unwrap();
        let r = t.relu(y).unwrap();
        let lr = t.sum_all(r).unwrap();
        let ll = t.sum_all(y).unwrap();
        let (gr, gl) = (t.backward(lr).unwrap(), t.backward(ll).unwrap());
        assert_eq!(gr.get(w).unwrap(), gl.get(w).unwrap());
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut t = Tape::new();
        assert!(matches!(
            t.leaf(Tensor::new(vec![1], vec![f64::NAN]).unwrap()),
            Err(TensorError::NonFiniteDetected(_))
        ));
        let x = t.leaf(Tensor::new(vec![1], vec![1e300]).unwrap()).unwrap();
        assert!(matches!(t.mul(x, x), Err(TensorError::NonFiniteDetected("mul"))));
        assert!(matches!(t.scale(x, 1e10), Err(TensorError::NonFiniteDetected("scale"))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = t.leaf(Tensor::zeros(&[3, 2])).unwrap();
        assert!(matches!(t.add(a, b), Err(TensorError::ShapeMismatch(_))));
        assert!(t.channel_linear(a, b, 1).is_err());
        assert!(t.broadcast_to(a, &[2, 4]).is_err());
        assert!(t.diag_mask(a, 0, 1).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn diag_mask_zeroes_plane() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[2, 3, 3], 1.0)).unwrap();
        let m = t.diag_mask(x, 1, 2).unwrap();
        let v = t.value(m);
        for b in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(v.get(&[b, i, j]), if i == j { 0.0 } else { 1.0 });
                }
            }
        }
    }

    #[test]
    fn batchnorm_eval_is_affine() {
        let stats = BatchStats {
            mean: vec![1.0, -1.0],
            var: vec![4.0, 0.25],
        };
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 2, 1], vec![3.0, 0.0]).unwrap()).unwrap();
        let g = t.constant(Tensor::new(vec![2], vec![2.0, 1.0]).unwrap()).unwrap();
        let b = t.constant(Tensor::new(vec![2], vec![0.5, 0.0]).unwrap()).unwrap();
        let y = t.batchnorm(x, g, b, BatchNormMode::Eval(&stats)).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - (2.0 * 2.0 / (4.0 + BATCHNORM_EPS).sqrt() + 0.5)).abs() < 1e-12);
        assert!((v[1] - 1.0 / (0.25 + BATCHNORM_EPS).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn logsumexp_shift_invariance(xs in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let mut t = Tape::new();
            let n = xs.len();
            let a = t.constant(Tensor::new(vec![n], xs.clone()).unwrap()).unwrap();
            let b = t.constant(Tensor::new(vec![n], xs.iter().map(|x| x + c).collect()).unwrap()).unwrap();
            let la = t.logsumexp(a, &[0], false).unwrap();
            let lb = t.logsumexp(b, &[0], false).unwrap();
            prop_assert!((t.value(la).item() - (t.value(lb).item() - c)).abs() < 1e-12);
        }
    }
}
