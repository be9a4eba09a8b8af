use super::conv::{self, ConvAlgorithm, ConvConfig, ConvGeom, ConvNeeds};
use super::{AutodiffError, Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// How an operand of an elementwise op maps onto the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Full,
    /// `[1, C, 1, 1]` or `[C]` against `[N, C, H, W]`.
    PerChannel { c: usize, hw: usize },
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Full => i,
            Bcast::PerChannel { c, hw } => (i / hw) % c,
        }
    }
}

/// Operation kinds with a backward rule, as listed by gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Add,
    Sub,
    Mul,
    Affine,
    Relu,
    Abs,
    Sum,
    Mean,
    LogSoftmax,
    SliceChannels,
    ConcatChannels,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2d,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Affine,
        OpKind::Relu,
        OpKind::Abs,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::LogSoftmax,
        OpKind::SliceChannels,
        OpKind::ConcatChannels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::Abs => "abs",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::SliceChannels => "slice_channels",
            OpKind::ConcatChannels => "concat_channels",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
        ba: Bcast,
        bb: Bcast,
    },
    Affine {
        a: Var,
        mul: f64,
    },
    Relu(Var),
    Abs(Var),
    Reduce {
        a: Var,
        axes: Vec<usize>,
        mean: bool,
    },
    LogSoftmax {
        a: Var,
        axis: usize,
    },
    SliceChannels {
        a: Var,
        start: usize,
    },
    ConcatChannels(Vec<Var>),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Binary { op, .. } => match op {
                BinaryOp::Add => OpKind::Add,
                BinaryOp::Sub => OpKind::Sub,
                BinaryOp::Mul => OpKind::Mul,
            },
            Op::Affine { .. } => OpKind::Affine,
            Op::Relu(_) => OpKind::Relu,
            Op::Abs(_) => OpKind::Abs,
            Op::Reduce { mean: false, .. } => OpKind::Sum,
            Op::Reduce { mean: true, .. } => OpKind::Mean,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::ConcatChannels(_) => OpKind::ConcatChannels,
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Append-only tape of executed tensor operations.
///
/// Nodes are recorded in execution order, so the tape is topologically
/// sorted by construction and [`Graph::backward`] is a single reverse sweep.
/// Leaf gradients accumulate across backward calls until [`Graph::zero_grad`].
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    algo: ConvAlgorithm,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            algo: ConvAlgorithm::Im2col,
            fault: None,
        }
    }

    pub fn with_conv_algorithm(mut self, algo: ConvAlgorithm) -> Self {
        self.algo = algo;
        self
    }

    /// Corrupts the backward rule of `kind` (gradient scaled by 1.5).
    /// Only meant for negative-control tests of the gradient checker.
    pub fn with_fault(mut self, kind: Option<OpKind>) -> Self {
        self.fault = kind;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Result<Var, AutodiffError> {
        if let Some(kind) = op.kind() {
            if !value.all_finite() {
                return Err(AutodiffError::NonFinite(kind.name()));
            }
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf value; gradients are accumulated for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        cfg: ConvConfig,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = bias.map(|b| self.value(b));
        let geom = ConvGeom::new(x, k, b, cfg)?;
        let out = conv::forward(x, k, b, &geom, self.algo);
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        )
    }

    fn bcast_of(shape: &[usize], out: &[usize]) -> Option<Bcast> {
        if shape == out {
            return Some(Bcast::Full);
        }
        if let [_, c, h, w] = *out {
            let per_channel = shape == [1, c, 1, 1] || shape == [c];
            if per_channel {
                return Some(Bcast::PerChannel { c, hw: h * w });
            }
        }
        None
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let out_shape = if self.value(a).len() >= self.value(b).len() {
            sa.to_vec()
        } else {
            sb.to_vec()
        };
        let (Some(ba), Some(bb)) = (
            Self::bcast_of(sa, &out_shape),
            Self::bcast_of(sb, &out_shape),
        ) else {
            return Err(AutodiffError::Shape(format!(
                "incompatible shapes {sa:?} and {sb:?} for {op:?}"
            )));
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data: Vec<T> = if ba == Bcast::Full && bb == Bcast::Full {
            match op {
                BinaryOp::Add => da.iter().zip(db).map(|(&x, &y)| x + y).collect(),
                BinaryOp::Sub => da.iter().zip(db).map(|(&x, &y)| x - y).collect(),
                BinaryOp::Mul => da.iter().zip(db).map(|(&x, &y)| x * y).collect(),
            }
        } else {
            (0..n)
                .map(|i| {
                    let (x, y) = (da[ba.index(i)], db[bb.index(i)]);
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                    }
                })
                .collect()
        };
        let rg = self.rg(&[a, b]);
        let value = Tensor::new(&out_shape, data)?;
        self.push(value, Op::Binary { op, a, b, ba, bb }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// `mul · a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Result<Var, AutodiffError> {
        let (m, c) = (T::from_f64_lossy(mul), T::from_f64_lossy(add));
        let value = self.value(a).map(|v| m * v + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Affine { a, mul }, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.affine(a, c, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(T::abs);
        let rg = self.rg(&[a]);
        self.push(value, Op::Abs(a), rg)
    }

    fn reduce(&mut self, a: Var, axes: &[usize], mean: bool) -> Result<Var, AutodiffError> {
        let shape = self.value(a).shape().to_vec();
        let mut axes: Vec<usize> = if axes.is_empty() {
            (0..shape.len()).collect()
        } else {
            axes.to_vec()
        };
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(AutodiffError::Shape(format!(
                "axis {bad} out of range for shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); out_len];
        let src = self.value(a).data();
        if out_len == 1 {
            out[0] = src.iter().copied().sum();
        } else {
            let strides = strides_of(&shape);
            let out_strides = strides_of(&out_shape);
            for (i, &v) in src.iter().enumerate() {
                out[reduced_index(i, &strides, &out_strides, &out_shape)] += v;
            }
        }
        if mean {
            let inv = T::one() / T::from_usize(count.max(1)).expect("count");
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(&[a]);
        let value = Tensor::new(&out_shape, out)?;
        self.push(
            value,
            Op::Reduce {
                a,
                axes,
                mean,
            },
            rg,
        )
    }

    /// Sum over `axes` (all axes when empty); reduced axes keep size 1.
    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var, AutodiffError> {
        self.reduce(a, axes, false)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var, AutodiffError> {
        self.reduce(a, axes, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.reduce(a, &[], false)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.reduce(a, &[], true)
    }

    /// Log-softmax along `axis`, stabilised by subtracting the running max.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::Shape(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * dim * inner + k * inner + i;
                let m = (0..dim).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let lse = (0..dim).map(|k| (src[at(k)] - m).exp()).sum::<T>().ln() + m;
                for k in 0..dim {
                    out[at(k)] = src[at(k)] - lse;
                }
            }
        }
        let rg = self.rg(&[a]);
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::LogSoftmax { a, axis }, rg)
    }

    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let value = self.value(a).channels(start, len)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceChannels { a, start }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let rg = self.rg(parts);
        self.push(value, Op::ConcatChannels(parts.to_vec()), rg)
    }

    /// Reverse sweep from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = &self.nodes[loss.0];
        if !lv.value.is_scalar() {
            return Err(AutodiffError::NotScalar(lv.value.shape().to_vec()));
        }
        if !lv.requires_grad {
            return Err(AutodiffError::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.value.shape(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Some(kind) = node.op.kind() {
                if self.fault == Some(kind) {
                    let f = T::from_f64_lossy(1.5);
                    g.data_mut().iter_mut().for_each(|v| *v *= f);
                }
            }
            let contributions = self.local_backward(idx, &g);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (v, cg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_assign(&cg),
                    None => grads[v.0] = Some(cg),
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let needs = ConvNeeds {
                    input: rg(*input),
                    kernel: rg(*kernel),
                    bias: bias.is_some_and(rg),
                };
                let grads = conv::backward(val(*input), val(*kernel), g, geom, needs, self.algo);
                let mut out = Vec::new();
                if let Some(gi) = grads.input {
                    out.push((*input, gi));
                }
                if let Some(gk) = grads.kernel {
                    out.push((*kernel, gk));
                }
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    let shape = val(*b).shape().to_vec();
                    out.push((*b, gb.reshape(&shape).expect("bias shape")));
                }
                out
            }
            Op::Binary { op, a, b, ba, bb } => {
                let mut out = Vec::new();
                let gd = g.data();
                let operand_grad = |v: Var, bc: Bcast, f: &dyn Fn(usize) -> T| {
                    let target = val(v);
                    let mut data = vec![T::zero(); target.len()];
                    match bc {
                        Bcast::Full => data.iter_mut().enumerate().for_each(|(i, d)| *d = f(i)),
                        Bcast::PerChannel { .. } => {
                            for i in 0..gd.len() {
                                data[bc.index(i)] += f(i);
                            }
                        }
                    }
                    Tensor::new(target.shape(), data).expect("operand grad")
                };
                let (xa, xb) = (val(*a).data(), val(*b).data());
                if rg(*a) {
                    let t = match op {
                        BinaryOp::Add | BinaryOp::Sub => operand_grad(*a, *ba, &|i| gd[i]),
                        BinaryOp::Mul => operand_grad(*a, *ba, &|i| gd[i] * xb[bb.index(i)]),
                    };
                    out.push((*a, t));
                }
                if rg(*b) {
                    let t = match op {
                        BinaryOp::Add => operand_grad(*b, *bb, &|i| gd[i]),
                        BinaryOp::Sub => operand_grad(*b, *bb, &|i| -gd[i]),
                        BinaryOp::Mul => operand_grad(*b, *bb, &|i| gd[i] * xa[ba.index(i)]),
                    };
                    out.push((*b, t));
                }
                out
            }
            Op::Affine { a, mul } => {
                let m = T::from_f64_lossy(*mul);
                vec![(*a, g.map(|v| v * m))]
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let data = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*a, Tensor::new(g.shape(), data).expect("relu grad"))]
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                let data = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*a, Tensor::new(g.shape(), data).expect("abs grad"))]
            }
            Op::Reduce { a, axes, mean } => {
                let shape = val(*a).shape();
                let count: usize = axes.iter().map(|&ax| shape[ax]).product();
                let scale = if *mean {
                    T::one() / T::from_usize(count.max(1)).expect("count")
                } else {
                    T::one()
                };
                let n: usize = shape.iter().product();
                let data: Vec<T> = if g.len() == 1 {
                    vec![g.item() * scale; n]
                } else {
                    let strides = strides_of(shape);
                    let out_strides = strides_of(g.shape());
                    (0..n)
                        .map(|i| g.data()[reduced_index(i, &strides, &out_strides, g.shape())] * scale)
                        .collect()
                };
                vec![(*a, Tensor::new(shape, data).expect("reduce grad"))]
            }
            Op::LogSoftmax { a, axis } => {
                let y = node.value.data();
                let (outer, dim, inner) = split_axis(node.value.shape(), *axis);
                let gd = g.data();
                let mut data = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * dim * inner + k * inner + i;
                        let gsum: T = (0..dim).map(|k| gd[at(k)]).sum();
                        for k in 0..dim {
                            data[at(k)] = gd[at(k)] - y[at(k)].exp() * gsum;
                        }
                    }
                }
                vec![(*a, Tensor::new(g.shape(), data).expect("log_softmax grad"))]
            }
            Op::SliceChannels { a, start } => {
                let src = val(*a);
                let (n, c, h, w) = src.dims4().expect("4-D");
                let len = g.shape()[1];
                let hw = h * w;
                let mut data = vec![T::zero(); src.len()];
                for b in 0..n {
                    let dst = (b * c + start) * hw;
                    data[dst..dst + len * hw]
                        .copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
                }
                vec![(*a, Tensor::new(src.shape(), data).expect("slice grad"))]
            }
            Op::ConcatChannels(parts) => {
                let mut out = Vec::new();
                let mut start = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if rg(p) {
                        out.push((p, g.channels(start, pc).expect("concat grad")));
                    }
                    start += pc;
                }
                out
            }
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn reduced_index(i: usize, strides: &[usize], out_strides: &[usize], out_shape: &[usize]) -> usize {
    let mut rem = i;
    let mut o = 0;
    for d in 0..strides.len() {
        let coord = rem / strides[d];
        rem %= strides[d];
        if out_shape[d] != 1 {
            o += coord * out_strides[d];
        }
    }
    o
}
