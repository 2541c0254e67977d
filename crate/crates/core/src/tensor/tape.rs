use super::kernels::{self, BroadcastMap, ConvGeom};
use super::{Precision, Tensor, TensorError};

/// Identity of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride and zero padding of a 2-D (transposed) convolution, as
/// `[height, width]` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvAttrs {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvAttrs {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride: [stride, stride], padding: [padding, padding] }
    }
}

/// Operator kinds understood by [`Tape::forward_op`].
///
/// Shape rules:
/// - `Add`/`Sub`/`Mul`/`Div`: numpy broadcasting of the two inputs.
/// - `MatMul`: `[m, k] × [k, n] → [m, n]`.
/// - `Conv2d`: `[B, C, H, W] × [O, C, kh, kw] → [B, O, Ho, Wo]`.
/// - `TransposedConv2d`: `[B, C, h, w] × [C, O, kh, kw] → [B, O, (h-1)s-2p+kh, ...]`.
/// - unary element-wise kinds keep the input shape.
/// - `Mean`/`Sum` reduce to `[1]`; the `*Axes` variants keep reduced axes as 1.
/// - `Concat`/`Slice` act along one axis; other extents must agree.
/// - `DropoutMaskApply` and `GaussianNoiseAdd` take `(x, constant)` of equal shape.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Conv2d(ConvAttrs),
    TransposedConv2d(ConvAttrs),
    LeakyRelu { alpha: f64 },
    Relu,
    Sigmoid,
    Tanh,
    Log,
    Exp,
    Sqrt,
    Abs,
    Softplus,
    Neg,
    Scale(f64),
    Offset(f64),
    Mean,
    Sum,
    MeanAxes(Vec<usize>),
    SumAxes(Vec<usize>),
    Reshape(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    DropoutMaskApply,
    GaussianNoiseAdd,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d(_) => "conv2d",
            OpKind::TransposedConv2d(_) => "transposed_conv2d",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Sqrt => "sqrt",
            OpKind::Abs => "abs",
            OpKind::Softplus => "softplus",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::MeanAxes(_) => "mean_axes",
            OpKind::SumAxes(_) => "sum_axes",
            OpKind::Reshape(_) => "reshape",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::DropoutMaskApply => "dropout_mask_apply",
            OpKind::GaussianNoiseAdd => "gaussian_noise_add",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::Conv2d(_)
            | OpKind::TransposedConv2d(_)
            | OpKind::DropoutMaskApply
            | OpKind::GaussianNoiseAdd => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
struct Record {
    kind: OpKind,
    inputs: Vec<NodeId>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    record: Option<Record>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Ordered record of every operation of one forward pass.
///
/// Nodes are appended in execution order, so the tape is topologically
/// sorted by construction and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self { nodes: Vec::new(), precision }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&mut self, mut value: Tensor) -> NodeId {
        value.clear_grad();
        self.precision.round_slice(value.data_mut());
        self.push(value, None, true)
    }

    /// Non-trainable input (data, masks, noise, labels).
    pub fn constant(&mut self, mut value: Tensor) -> NodeId {
        value.clear_grad();
        self.precision.round_slice(value.data_mut());
        self.push(value, None, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, record: Option<Record>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, record, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<(), TensorError> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::UnknownNode { op, node: id.0 });
        }
        Ok(())
    }

    /// Evaluates one operator and records it.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        let name = kind.name();
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity { op: name, expected: n, got: inputs.len() });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::Empty(name));
        }
        for &i in inputs {
            self.check(i, name)?;
        }
        let (shape, mut data) = self.eval(&kind, inputs)?;
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::Divergence {
                op: name,
                phase: "forward",
                detail: format!("element {bad} = {}", data[bad]),
            });
        }
        self.precision.round_slice(&mut data);
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let value = Tensor::from_parts(shape, data);
        Ok(self.push(value, Some(Record { kind, inputs: inputs.to_vec() }), requires_grad))
    }

    fn eval(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
        let v = |k: usize| &self.nodes[inputs[k].0].value;
        let name = kind.name();
        let mismatch = |a: &Tensor, b: &Tensor| TensorError::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let unary = |f: &dyn Fn(f64) -> f64| {
            let x = v(0);
            (x.shape().to_vec(), x.data().iter().map(|&a| f(a)).collect::<Vec<_>>())
        };
        Ok(match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (v(0), v(1));
                let out = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| mismatch(a, b))?;
                let n: usize = out.iter().product();
                let ma = BroadcastMap::new(&out, a.shape());
                let mb = BroadcastMap::new(&out, b.shape());
                let (ad, bd) = (a.data(), b.data());
                let f: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    OpKind::Mul => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                if matches!(kind, OpKind::Div) && bd.iter().any(|&y| y == 0.0) {
                    return Err(TensorError::Domain { op: name, detail: "division by zero".into() });
                }
                let data = match (&ma, &mb) {
                    (BroadcastMap::Same, BroadcastMap::Same) => {
                        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
                    }
                    _ => (0..n).map(|i| f(ad[ma.index(i)], bd[mb.index(i)])).collect(),
                };
                (out, data)
            }
            OpKind::MatMul => {
                let (a, b) = (v(0), v(1));
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(mismatch(a, b));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                (vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
            }
            OpKind::Conv2d(attrs) => {
                let g = self.conv_geom(inputs, *attrs, false)?;
                (vec![g.batch, g.out_c, g.out_h, g.out_w], kernels::conv2d(v(0).data(), v(1).data(), &g))
            }
            OpKind::TransposedConv2d(attrs) => {
                let g = self.conv_geom(inputs, *attrs, true)?;
                (
                    vec![g.batch, g.in_c, g.in_h, g.in_w],
                    kernels::conv_transpose2d(v(0).data(), v(1).data(), &g),
                )
            }
            OpKind::LeakyRelu { alpha } => {
                let a = *alpha;
                unary(&|x| if x > 0.0 { x } else { a * x })
            }
            OpKind::Relu => unary(&|x| x.max(0.0)),
            OpKind::Sigmoid => unary(&kernels::sigmoid),
            OpKind::Tanh => unary(&f64::tanh),
            OpKind::Log => {
                if let Some(bad) = v(0).data().iter().find(|&&x| x <= 0.0) {
                    return Err(TensorError::Domain { op: name, detail: format!("log of non-positive value {bad}") });
                }
                unary(&f64::ln)
            }
            OpKind::Exp => unary(&f64::exp),
            OpKind::Sqrt => {
                if let Some(bad) = v(0).data().iter().find(|&&x| x < 0.0) {
                    return Err(TensorError::Domain { op: name, detail: format!("sqrt of negative value {bad}") });
                }
                unary(&f64::sqrt)
            }
            OpKind::Abs => unary(&f64::abs),
            OpKind::Softplus => unary(&kernels::softplus),
            OpKind::Neg => unary(&|x| -x),
            OpKind::Scale(c) => {
                let c = *c;
                unary(&|x| c * x)
            }
            OpKind::Offset(c) => {
                let c = *c;
                unary(&|x| x + c)
            }
            OpKind::Sum => (vec![1], vec![v(0).data().iter().sum()]),
            OpKind::Mean => {
                let x = v(0);
                (vec![1], vec![x.data().iter().sum::<f64>() / x.numel() as f64])
            }
            OpKind::SumAxes(axes) | OpKind::MeanAxes(axes) => {
                let x = v(0);
                let out = reduced_shape(x.shape(), axes).ok_or_else(|| TensorError::ShapeMismatch {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: axes.clone(),
                })?;
                let map = BroadcastMap::new(x.shape(), &out);
                let mut data = vec![0.0; out.iter().product()];
                for (i, &xv) in x.data().iter().enumerate() {
                    data[map.index(i)] += xv;
                }
                if matches!(kind, OpKind::MeanAxes(_)) {
                    let count = (x.numel() / data.len()) as f64;
                    data.iter_mut().for_each(|d| *d /= count);
                }
                (out, data)
            }
            OpKind::Reshape(shape) => {
                let x = v(0);
                if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
                    return Err(TensorError::ShapeMismatch { op: name, lhs: x.shape().to_vec(), rhs: shape.clone() });
                }
                (shape.clone(), x.data().to_vec())
            }
            OpKind::Concat { axis } => {
                let first = v(0);
                let axis = *axis;
                if axis >= first.shape().len() {
                    return Err(mismatch(first, first));
                }
                let mut out = first.shape().to_vec();
                out[axis] = 0;
                for k in 0..inputs.len() {
                    let t = v(k);
                    let same_rank = t.shape().len() == first.shape().len();
                    if !same_rank
                        || t.shape().iter().zip(first.shape()).enumerate().any(|(d, (x, y))| d != axis && x != y)
                    {
                        return Err(mismatch(first, t));
                    }
                    out[axis] += t.shape()[axis];
                }
                let outer: usize = out[..axis].iter().product();
                let mut data = Vec::with_capacity(out.iter().product());
                for o in 0..outer {
                    for k in 0..inputs.len() {
                        let t = v(k);
                        let block = t.numel() / outer;
                        data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                    }
                }
                (out, data)
            }
            OpKind::Slice { axis, start, end } => {
                let x = v(0);
                let (axis, start, end) = (*axis, *start, *end);
                if axis >= x.shape().len() || start >= end || end > x.shape()[axis] {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        lhs: x.shape().to_vec(),
                        rhs: vec![axis, start, end],
                    });
                }
                let outer: usize = x.shape()[..axis].iter().product();
                let inner: usize = x.shape()[axis + 1..].iter().product();
                let full = x.shape()[axis] * inner;
                let mut out = x.shape().to_vec();
                out[axis] = end - start;
                let mut data = Vec::with_capacity(outer * (end - start) * inner);
                for o in 0..outer {
                    data.extend_from_slice(&x.data()[o * full + start * inner..o * full + end * inner]);
                }
                (out, data)
            }
            OpKind::DropoutMaskApply | OpKind::GaussianNoiseAdd => {
                let (x, c) = (v(0), v(1));
                if x.shape() != c.shape() {
                    return Err(mismatch(x, c));
                }
                let data = if matches!(kind, OpKind::DropoutMaskApply) {
                    x.data().iter().zip(c.data()).map(|(a, b)| a * b).collect()
                } else {
                    x.data().iter().zip(c.data()).map(|(a, b)| a + b).collect()
                };
                (x.shape().to_vec(), data)
            }
        })
    }

    fn conv_geom(&self, inputs: &[NodeId], attrs: ConvAttrs, transposed: bool) -> Result<ConvGeom, TensorError> {
        let x = &self.nodes[inputs[0].0].value;
        let w = &self.nodes[inputs[1].0].value;
        let op = if transposed { "transposed_conv2d" } else { "conv2d" };
        let bad = || TensorError::ShapeMismatch { op, lhs: x.shape().to_vec(), rhs: w.shape().to_vec() };
        if x.shape().len() != 4 || w.shape().len() != 4 || x.shape()[1] != w.shape()[0] && transposed {
            return Err(bad());
        }
        if attrs.stride.contains(&0) {
            return Err(bad());
        }
        let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        let [sh, sw] = attrs.stride;
        let [ph, pw] = attrs.padding;
        if transposed {
            let o = w.shape()[1];
            let big_h = ((h - 1) * sh + kh).checked_sub(2 * ph).filter(|&v| v > 0).ok_or_else(bad)?;
            let big_w = ((wd - 1) * sw + kw).checked_sub(2 * pw).filter(|&v| v > 0).ok_or_else(bad)?;
            Ok(ConvGeom {
                batch: b, in_c: o, in_h: big_h, in_w: big_w, out_c: c, out_h: h, out_w: wd,
                kh, kw, sh, sw, ph, pw,
            })
        } else {
            if w.shape()[1] != c || h + 2 * ph < kh || wd + 2 * pw < kw {
                return Err(bad());
            }
            let out_h = (h + 2 * ph - kh) / sh + 1;
            let out_w = (wd + 2 * pw - kw) / sw + 1;
            Ok(ConvGeom {
                batch: b, in_c: c, in_h: h, in_w: wd, out_c: w.shape()[0], out_h, out_w,
                kh, kw, sh, sw, ph, pw,
            })
        }
    }

    /// Reverse sweep from a scalar `loss`. Leaf nodes receive their
    /// gradient in their tensor's grad slot (zeros when unreachable).
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::NotOnTape(loss.0));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let Some(record) = &node.record else {
                grads[idx] = Some(g);
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let contributions = self.local_grads(idx, record, &g)?;
            for (input, contrib) in record.inputs.iter().zip(contributions) {
                let Some(mut contrib) = contrib else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if let Some(bad) = contrib.iter().position(|x| !x.is_finite()) {
                    return Err(TensorError::Divergence {
                        op: record.kind.name(),
                        phase: "backward",
                        detail: format!("gradient element {bad} = {}", contrib[bad]),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => {
                        self.precision.round_slice(&mut contrib);
                        *slot = Some(contrib)
                    }
                }
            }
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.record.is_none() && node.requires_grad {
                let g = grads[i].get_or_insert_with(|| vec![0.0; node.value.numel()]);
                self.precision.round_slice(g);
                node.value.set_grad(g.clone())?;
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one recorded op, one entry per input.
    fn local_grads(&self, idx: usize, record: &Record, g: &[f64]) -> Result<Vec<Option<Vec<f64>>>, TensorError> {
        let out = &self.nodes[idx].value;
        let inp = |k: usize| &self.nodes[record.inputs[k].0].value;
        let wants = |k: usize| self.nodes[record.inputs[k].0].requires_grad;
        let elementwise = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Option<Vec<f64>>> {
            // f(x, y) = local derivative at input x with output y
            let x = inp(0).data();
            let y = out.data();
            vec![Some(g.iter().zip(x).zip(y).map(|((gv, &xv), &yv)| gv * f(xv, yv)).collect())]
        };
        Ok(match &record.kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (inp(0), inp(1));
                let ma = BroadcastMap::new(out.shape(), a.shape());
                let mb = BroadcastMap::new(out.shape(), b.shape());
                let (ad, bd) = (a.data(), b.data());
                let mut ga = wants(0).then(|| vec![0.0; a.numel()]);
                let mut gb = wants(1).then(|| vec![0.0; b.numel()]);
                for (i, &gv) in g.iter().enumerate() {
                    let (ia, ib) = (ma.index(i), mb.index(i));
                    let (da, db) = match record.kind {
                        OpKind::Add => (gv, gv),
                        OpKind::Sub => (gv, -gv),
                        OpKind::Mul => (gv * bd[ib], gv * ad[ia]),
                        _ => (gv / bd[ib], -gv * ad[ia] / (bd[ib] * bd[ib])),
                    };
                    if let Some(ga) = &mut ga {
                        ga[ia] += da;
                    }
                    if let Some(gb) = &mut gb {
                        gb[ib] += db;
                    }
                }
                vec![ga, gb]
            }
            OpKind::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let ga = wants(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_grad_lhs(g, b.data(), m, k, n, &mut da);
                    da
                });
                let gb = wants(1).then(|| {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_grad_rhs(g, a.data(), m, k, n, &mut db);
                    db
                });
                vec![ga, gb]
            }
            OpKind::Conv2d(attrs) | OpKind::TransposedConv2d(attrs) => {
                let transposed = matches!(record.kind, OpKind::TransposedConv2d(_));
                let geom = self.conv_geom(&record.inputs, *attrs, transposed)?;
                let (x, w) = (inp(0), inp(1));
                let mut dx = wants(0).then(|| vec![0.0; x.numel()]);
                let mut dw = wants(1).then(|| vec![0.0; w.numel()]);
                let f = if transposed { kernels::conv_transpose2d_backward } else { kernels::conv2d_backward };
                f(x.data(), w.data(), g, &geom, dx.as_deref_mut(), dw.as_deref_mut());
                vec![dx, dw]
            }
            OpKind::LeakyRelu { alpha } => {
                let a = *alpha;
                elementwise(&|x, _| if x > 0.0 { 1.0 } else { a })
            }
            OpKind::Relu => elementwise(&|x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            OpKind::Sigmoid => elementwise(&|_, y| y * (1.0 - y)),
            OpKind::Tanh => elementwise(&|_, y| 1.0 - y * y),
            OpKind::Log => elementwise(&|x, _| 1.0 / x),
            OpKind::Exp => elementwise(&|_, y| y),
            OpKind::Sqrt => elementwise(&|_, y| 0.5 / y),
            OpKind::Abs => elementwise(&|x, _| x.signum() * (x != 0.0) as u8 as f64),
            OpKind::Softplus => elementwise(&|x, _| kernels::sigmoid(x)),
            OpKind::Neg => elementwise(&|_, _| -1.0),
            OpKind::Scale(c) => {
                let c = *c;
                elementwise(&|_, _| c)
            }
            OpKind::Offset(_) => vec![Some(g.to_vec())],
            OpKind::Sum => vec![Some(vec![g[0]; inp(0).numel()])],
            OpKind::Mean => {
                let n = inp(0).numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            OpKind::SumAxes(_) | OpKind::MeanAxes(_) => {
                let x = inp(0);
                let map = BroadcastMap::new(x.shape(), out.shape());
                let scale = if matches!(record.kind, OpKind::MeanAxes(_)) {
                    out.numel() as f64 / x.numel() as f64
                } else {
                    1.0
                };
                vec![Some((0..x.numel()).map(|i| g[map.index(i)] * scale).collect())]
            }
            OpKind::Reshape(_) => vec![Some(g.to_vec())],
            OpKind::Concat { axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let mut parts: Vec<Vec<f64>> =
                    record.inputs.iter().map(|i| Vec::with_capacity(self.nodes[i.0].value.numel())).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (k, part) in parts.iter_mut().enumerate() {
                        let block = inp(k).numel() / outer;
                        part.extend_from_slice(&g[offset..offset + block]);
                        offset += block;
                    }
                }
                parts.into_iter().map(Some).collect()
            }
            OpKind::Slice { axis, start, end } => {
                let x = inp(0);
                let outer: usize = x.shape()[..*axis].iter().product();
                let inner: usize = x.shape()[axis + 1..].iter().product();
                let full = x.shape()[*axis] * inner;
                let width = (end - start) * inner;
                let mut dx = vec![0.0; x.numel()];
                for o in 0..outer {
                    dx[o * full + start * inner..o * full + end * inner]
                        .copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                vec![Some(dx)]
            }
            OpKind::DropoutMaskApply => {
                let mask = inp(1).data();
                let dm = wants(1).then(|| g.iter().zip(inp(0).data()).map(|(a, b)| a * b).collect());
                vec![Some(g.iter().zip(mask).map(|(a, b)| a * b).collect()), dm]
            }
            OpKind::GaussianNoiseAdd => vec![Some(g.to_vec()), wants(1).then(|| g.to_vec())],
        })
    }
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Option<Vec<usize>> {
    let mut out = shape.to_vec();
    for &a in axes {
        *out.get_mut(a)? = 1;
    }
    Some(out)
}

macro_rules! binary_ops {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
                    self.forward_op($kind, &[a, b])
                }
            )*
        }
    };
}

macro_rules! unary_ops {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
                    self.forward_op($kind, &[x])
                }
            )*
        }
    };
}

binary_ops! {
    add => OpKind::Add,
    sub => OpKind::Sub,
    mul => OpKind::Mul,
    div => OpKind::Div,
    matmul => OpKind::MatMul,
    dropout_mask_apply => OpKind::DropoutMaskApply,
    gaussian_noise_add => OpKind::GaussianNoiseAdd,
}

unary_ops! {
    relu => OpKind::Relu,
    sigmoid => OpKind::Sigmoid,
    tanh => OpKind::Tanh,
    log => OpKind::Log,
    exp => OpKind::Exp,
    sqrt => OpKind::Sqrt,
    abs => OpKind::Abs,
    softplus => OpKind::Softplus,
    neg => OpKind::Neg,
    mean => OpKind::Mean,
    sum => OpKind::Sum,
}

impl Tape {
    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::LeakyRelu { alpha }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Scale(c), &[x])
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Offset(c), &[x])
    }

    pub fn sum_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::SumAxes(axes.to_vec()), &[x])
    }

    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::MeanAxes(axes.to_vec()), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Reshape(shape.to_vec()), &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Slice { axis, start, end }, &[x])
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, attrs: ConvAttrs) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::Conv2d(attrs), &[x, w])
    }

    pub fn transposed_conv2d(&mut self, x: NodeId, w: NodeId, attrs: ConvAttrs) -> Result<NodeId, TensorError> {
        self.forward_op(OpKind::TransposedConv2d(attrs), &[x, w])
    }

    /// `Σ (a − b)²` reduced per leading-axis row, shape `[B, 1]`.
    pub fn row_sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let d = self.sub(a, b)?;
        let d2 = self.mul(d, d)?;
        let rank = self.shape(d2).len();
        let b_rows = self.shape(d2)[0];
        let flat = if rank == 2 { d2 } else { self.reshape(d2, &[b_rows, self.value(d2).row_len()])? };
        self.sum_axes(flat, &[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape() -> Tape {
        Tape::new(Precision::F64)
    }

    #[test]
    fn matmul_identity() {
        let mut t = tape();
        let a = t.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = t.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut t = tape();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn conv_all_ones() {
        let mut t = tape();
        let x = t.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let w = t.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let y = t.conv2d(x, w, ConvAttrs::new(1, 0)).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 2, 2]);
        assert_eq!(t.value(y).data(), &[4.0; 4]);
    }

    #[test]
    fn transposed_conv_doubles_extent() {
        let mut t = tape();
        let x = t.constant(Tensor::full([2, 3, 4, 4], 1.0));
        let w = t.constant(Tensor::full([3, 5, 4, 4], 1.0));
        let y = t.transposed_conv2d(x, w, ConvAttrs::new(2, 1)).unwrap();
        assert_eq!(t.shape(y), &[2, 5, 8, 8]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut t = tape();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = tape();
        let a = t.constant(Tensor::new([2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(t.log(a), Err(TensorError::Domain { op: "log", .. })));
    }

    #[test]
    fn square_gradient() {
        let mut t = tape();
        let w = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[6.0]);
        assert_eq!(t.value(w).grad().unwrap(), &[6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = tape();
        let w = t.leaf(Tensor::scalar(0.0));
        let one = t.constant(Tensor::scalar(1.0));
        let z = t.mul(w, one).unwrap();
        let s = t.sigmoid(z).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &[0.25]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut t = tape();
        let w = t.leaf(Tensor::scalar(2.0));
        let u = t.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = t.sum(w).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(u).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut t = tape();
        let w = t.leaf(Tensor::zeros([3]));
        assert!(matches!(t.backward(w), Err(TensorError::NotScalar(_))));
        assert!(matches!(t.backward(NodeId(99)), Err(TensorError::NotOnTape(99))));
    }

    #[test]
    fn divergence_names_the_op() {
        let mut t = tape();
        let w = t.leaf(Tensor::scalar(800.0));
        let err = t.exp(w).unwrap_err();
        assert!(matches!(err, TensorError::Divergence { op: "exp", .. }));
    }

    #[test]
    fn dropout_identity_mask() {
        let mut t = tape();
        let x = t.leaf(Tensor::new([2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap());
        let m = t.constant(Tensor::full([2, 2], 1.0));
        let y = t.dropout_mask_apply(x, m).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut t = tape();
        let a = t.leaf(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::new([2, 1], vec![5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = t.slice(c, 1, 2, 3).unwrap();
        assert_eq!(t.value(s).data(), &[5.0, 6.0]);
    }

    #[test]
    fn f32_mode_rounds_results() {
        let mut t = Tape::new(Precision::F32);
        let a = t.constant(Tensor::scalar(0.1));
        assert_eq!(t.value(a).item(), 0.1f32 as f64);
    }
}
