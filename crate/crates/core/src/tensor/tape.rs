//! Reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`], which copies the current value out of a
//! [`ParamStore`]; [`Tape::backward`] writes `∂loss/∂param` back into the
//! store's gradient buffers and clears the tape.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BnMode {
    /// Normalize with batch statistics and queue a running-stat update.
    Train { momentum: f32 },
    /// Normalize with the stored running statistics.
    Eval,
}

/// Running-statistics update produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f32>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f32>,
    pub momentum: f32,
}

/// Parameter ids of one batch-norm layer.
#[derive(Clone, Copy, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        invstd: Vec<f32>,
        batch_stats: bool,
    },
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Atan(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    ClampMin(Var, f32),
    Softmax {
        x: Var,
        split: (usize, usize, usize),
    },
    Upsample2x(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    BceWithLogitsSum {
        x: Var,
        target: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the leaves of a finished backward pass.
#[derive(Debug, Default)]
pub struct Grads {
    leaves: HashMap<usize, Vec<f32>>,
}

impl Grads {
    /// Gradient of a leaf created with `requires_grad`, zero-filled when the
    /// leaf was unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.leaves.get(&v.0).map(Vec::as_slice)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
}

/// Logistic function.
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Drain queued running-statistic updates from train-mode batch norms.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Record an input tensor. Its gradient is reported by `backward` when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad;
        self.push(tensor, Op::Leaf, rg)
    }

    /// A copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let mut t = self.value(v).clone();
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    /// Bring a stored parameter onto the tape. Repeated calls return the same
    /// variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut t = store.get(id).clone();
        t.grad = None;
        let rg = t.requires_grad;
        let v = self.push(t, Op::Param(id), rg);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, wd] = self.value(x).dims4(OP)?;
        let [o, i, kh, kw] = self.value(w).dims4(OP)?;
        if c != i {
            return Err(TensorError::DimMismatch {
                op: OP,
                axis: "input channels",
                left: c,
                right: i,
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: "stride must be at least 1".into(),
            });
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
            });
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [o] {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    axis: "bias length",
                    left: bs.iter().product(),
                    right: o,
                });
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            stride,
            pad: padding,
        };
        let out = kernels::conv2d_forward(
            self.data(x),
            self.data(w),
            b.map(|b| self.data(b)),
            &geom,
        );
        let t = Tensor::new(vec![n, o, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Batch normalization over the N, H, W axes of an NCHW tensor.
    pub fn batchnorm2d(
        &mut self,
        store: &ParamStore,
        x: Var,
        bn: &BnParams,
        mode: BnMode,
        eps: f32,
    ) -> Result<Var> {
        const OP: &str = "batchnorm2d";
        if eps <= 0.0 || !eps.is_finite() {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        let dims = self.value(x).dims4(OP)?;
        let c = dims[1];
        for (id, what) in [
            (bn.gamma, "gamma length"),
            (bn.beta, "beta length"),
            (bn.running_mean, "running mean length"),
            (bn.running_var, "running var length"),
        ] {
            let len = store.get(id).numel();
            if len != c {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    axis: what,
                    left: len,
                    right: c,
                });
            }
        }
        let gamma = self.param(store, bn.gamma);
        let beta = self.param(store, bn.beta);
        let running = match mode {
            BnMode::Eval => Some((
                store.get(bn.running_mean).data(),
                store.get(bn.running_var).data(),
            )),
            BnMode::Train { .. } => None,
        };
        let fwd = kernels::batchnorm_forward(
            self.data(x),
            dims,
            self.data(gamma),
            self.data(beta),
            running,
            eps,
        );
        if let BnMode::Train { momentum } = mode {
            let m = (dims[0] * dims[2] * dims[3]) as f32;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            self.bn_updates.push(BnUpdate {
                mean: bn.running_mean,
                var: bn.running_var,
                batch_mean: fwd.mean.clone(),
                batch_var: fwd.var.iter().map(|v| v * unbias).collect(),
                momentum,
            });
        }
        let t = Tensor::new(dims.to_vec(), fwd.out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: fwd.mean,
                invstd: fwd.invstd,
                batch_stats: matches!(mode, BnMode::Train { .. }),
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn atan(&mut self, x: Var) -> Var {
        self.unary(x, f32::atan, Op::Atan(x))
    }

    pub fn add_scalar(&mut self, x: Var, s: f32) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, s: f32) -> Var {
        self.unary(x, |v| v * s, Op::MulScalar(x, s))
    }

    pub fn clamp_min(&mut self, x: Var, lo: f32) -> Var {
        self.unary(x, |v| v.max(lo), Op::ClampMin(x, lo))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::Invalid {
                op: name,
                msg: format!("shape mismatch {:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f32::min, Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f32::max, Op::Maximum(a, b))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let split = kernels::split_axis(&shape, axis);
        let out = kernels::softmax_forward(self.data(x), split);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, split }, rg))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("nearest_upsample2x")?;
        let out = kernels::upsample2x_forward(self.data(x), [n, c, h, w]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c, 2 * h, 2 * w], out)?, Op::Upsample2x(x), rg))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = self.shape(*inputs.first().ok_or(TensorError::Invalid {
            op: OP,
            msg: "no inputs".into(),
        })?)
        .to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: OP,
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: first.len(),
                    shape: s.to_vec(),
                });
            }
            for (ax, (&a, &b)) in first.iter().zip(s).enumerate() {
                if ax != axis && a != b {
                    return Err(TensorError::DimMismatch {
                        op: OP,
                        axis: match ax {
                            0 => "batch",
                            2 => "height",
                            3 => "width",
                            _ => "non-concat axis",
                        },
                        left: a,
                        right: b,
                    });
                }
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Channel-style concat of two NCHW tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).dims4("concat_channels")?;
        self.value(b).dims4("concat_channels")?;
        self.concat(&[a, b], 1)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} exceeds axis of {}", start + len, shape[axis]),
            });
        }
        let (outer, d, inner) = kernels::split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * d + start) * inner..(o * d + start + len) * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s as f32), Op::Mean(x), rg)
    }

    /// `out[i] = x.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.data(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("index {bad} out of range for {} elements", src.len()),
            });
        }
        let out = idx.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gather { x, idx }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Sum over elements of the numerically stable binary cross-entropy
    /// between `sigmoid(x)` and `target`.
    pub fn bce_with_logits_sum(&mut self, x: Var, target: Vec<f32>) -> Result<Var> {
        let src = self.data(x);
        if src.len() != target.len() {
            return Err(TensorError::DimMismatch {
                op: "bce_with_logits",
                axis: "elements",
                left: src.len(),
                right: target.len(),
            });
        }
        let s: f64 = src
            .iter()
            .zip(&target)
            .map(|(&z, &t)| (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) as f64)
            .sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s as f32), Op::BceWithLogitsSum { x, target }, rg))
    }

    /// Multi-head scaled dot-product attention over `[batch, tokens, dim]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        const OP: &str = "attention";
        let qs = self.shape(q).to_vec();
        let [b, t, d] = qs[..] else {
            return Err(TensorError::Rank {
                op: OP,
                expected: 3,
                shape: qs,
            });
        };
        for (other, axis) in [(k, "key shape"), (v, "value shape")] {
            if self.shape(other) != qs.as_slice() {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    axis,
                    left: self.value(other).numel(),
                    right: b * t * d,
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("embedding dim {d} not divisible by {heads} heads"),
            });
        }
        let (out, probs) =
            kernels::attention_forward(self.data(q), self.data(k), self.data(v), (b, t, d), heads);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(qs, out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Run reverse-mode differentiation from a scalar `loss`.
    ///
    /// Gradients of trainable parameters are written into `store` (zero for
    /// parameters that do not reach the loss); leaf gradients are returned.
    /// The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, store, &mut leaves);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                leaves
                    .entry(i)
                    .or_insert_with(|| vec![0.0; node.value.numel()]);
            }
        }
        self.clear();
        Ok(Grads { leaves })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Vec<f32>,
        grads: &mut [Option<Vec<f32>>],
        store: &mut ParamStore,
        leaves: &mut HashMap<usize, Vec<f32>>,
    ) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, delta: Vec<f32>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta),
            }
        };
        let map = |x: Var, f: &dyn Fn(f32, f32, f32) -> f32| -> Vec<f32> {
            self.data(x)
                .iter()
                .zip(out)
                .zip(&g)
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect()
        };
        match &node.op {
            Op::Leaf => {
                leaves.insert(i, g);
            }
            Op::Param(id) => {
                if let Some(dst) = store.get_mut(*id).grad.as_mut() {
                    dst.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.data(*x), self.data(*w), &g, geom, self.rg(*x));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_stats,
            } => {
                let dims = self.value(*x).dims4("batchnorm2d").expect("checked");
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(
                    self.data(*x),
                    &g,
                    dims,
                    self.data(*gamma),
                    mean,
                    invstd,
                    *batch_stats,
                );
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Silu(x) => acc(
                *x,
                map(*x, &|xi, _, gi| {
                    let s = sigmoid(xi);
                    gi * s * (1.0 + xi * (1.0 - s))
                }),
            ),
            Op::Sigmoid(x) => acc(*x, map(*x, &|_, yi, gi| gi * yi * (1.0 - yi))),
            Op::Softplus(x) => acc(*x, map(*x, &|xi, _, gi| gi * sigmoid(xi))),
            Op::Atan(x) => acc(*x, map(*x, &|xi, _, gi| gi / (1.0 + xi * xi))),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::MulScalar(x, s) => acc(*x, g.iter().map(|gi| gi * s).collect()),
            Op::ClampMin(x, lo) => acc(
                *x,
                map(*x, &|xi, _, gi| if xi > *lo { gi } else { 0.0 }),
            ),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(db).map(|(gi, bi)| gi * bi).collect());
                acc(*b, g.iter().zip(da).map(|(gi, ai)| gi * ai).collect());
            }
            Op::Div(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(db).map(|(gi, bi)| gi / bi).collect());
                acc(
                    *b,
                    g.iter()
                        .zip(da)
                        .zip(db)
                        .map(|((gi, ai), bi)| -gi * ai / (bi * bi))
                        .collect(),
                );
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let pick_a = |x: f32, y: f32| match node.op {
                    Op::Minimum(..) => x <= y,
                    _ => x >= y,
                };
                let (da, db) = (self.data(*a), self.data(*b));
                let sel: Vec<bool> = da.iter().zip(db).map(|(&x, &y)| pick_a(x, y)).collect();
                acc(*a, g.iter().zip(&sel).map(|(&gi, &s)| if s { gi } else { 0.0 }).collect());
                acc(*b, g.iter().zip(&sel).map(|(&gi, &s)| if s { 0.0 } else { gi }).collect());
            }
            Op::Softmax { x, split } => acc(*x, kernels::softmax_backward(out, &g, *split)),
            Op::Upsample2x(x) => {
                let dims = self.value(*x).dims4("upsample").expect("checked");
                acc(*x, kernels::upsample2x_backward(&g, dims));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let d = self.shape(v)[*axis];
                    let mut part = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        let s = (o * total + offset) * inner;
                        part.extend_from_slice(&g[s..s + d * inner]);
                    }
                    offset += d;
                    acc(v, part);
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, d, inner) = kernels::split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0f32; outer * d * inner];
                for o in 0..outer {
                    let s = (o * d + start) * inner;
                    dx[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0] / n as f32; n]);
            }
            Op::Gather { x, idx } => {
                let mut dx = vec![0.0f32; self.value(*x).numel()];
                for (&j, &gi) in idx.iter().zip(&g) {
                    dx[j] += gi;
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g),
            Op::BceWithLogitsSum { x, target } => {
                let g0 = g[0];
                acc(
                    *x,
                    self.data(*x)
                        .iter()
                        .zip(target)
                        .map(|(&z, &t)| g0 * (sigmoid(z) - t))
                        .collect(),
                );
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let [b, t, d] = self.shape(*q)[..] else { unreachable!() };
                let (dq, dk, dv) = kernels::attention_backward(
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    &g,
                    (b, t, d),
                    *heads,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
        }
    }
}

impl ParamStore {
    /// Apply queued running-statistic updates:
    /// `running = (1 - momentum)·running + momentum·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let blend = |dst: &mut Tensor, src: &[f32]| {
                for (r, &b) in dst.data_mut().iter_mut().zip(src) {
                    *r = (1.0 - u.momentum) * *r + u.momentum * b;
                }
            };
            blend(self.get_mut(u.mean), &u.batch_mean);
            blend(self.get_mut(u.var), &u.batch_var);
        }
    }
}
