//! Reverse-mode differentiation over a flat operation tape.
//!
//! A [`Tape`] owns every intermediate value produced during a forward pass.
//! [`Var`] is an index into it. [`Tape::backward`] walks the recorded
//! operations in exact reverse order and returns a [`Gradients`] table; it
//! does not mutate the tape, so it can be called repeatedly.
//!
//! ```
//! use triflow_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param("x", Tensor::from_vec(vec![1.0, 2.0]));
//! let y = tape.square(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param("x").unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod kernels;

use kernels::ConvDims;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    LeakyRelu(Scalar),
    Sigmoid,
    Tanh,
    Square,
}

/// Element-wise operation selector for [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Binary(BinaryOp),
    Unary(UnaryOp),
}

/// Second operand of a binary element-wise operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Var(Var),
    Scalar(Scalar),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    WithScalar(BinaryOp, Var, Scalar),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    Sample2d {
        plane: Var,
        coords: Var,
    },
    Sample3d {
        volume: Var,
        coords: Var,
    },
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    ForwardWarp {
        features: Var,
        flow: Var,
        weight_sum: Vec<Scalar>,
    },
    MaskBlend {
        mask: Var,
        a: Var,
        b: Var,
    },
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(BinaryOp::Add, ..) | Op::WithScalar(BinaryOp::Add, ..) => "add",
            Op::Binary(BinaryOp::Sub, ..) | Op::WithScalar(BinaryOp::Sub, ..) => "sub",
            Op::Binary(BinaryOp::Mul, ..) | Op::WithScalar(BinaryOp::Mul, ..) => "mul",
            Op::Binary(BinaryOp::Div, ..) | Op::WithScalar(BinaryOp::Div, ..) => "div",
            Op::Unary(UnaryOp::LeakyRelu(_), _) => "leaky_relu",
            Op::Unary(UnaryOp::Sigmoid, _) => "sigmoid",
            Op::Unary(UnaryOp::Tanh, _) => "tanh",
            Op::Unary(UnaryOp::Square, _) => "square",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::Sample2d { .. } => "bilinear_sample2d",
            Op::Sample3d { .. } => "trilinear_sample3d",
            Op::Concat(_) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(_) => "reshape",
            Op::ForwardWarp { .. } => "forward_warp",
            Op::MaskBlend { .. } => "mask_blend",
            Op::Sum(_) => "sum",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder and parameter registry.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    fault: Option<(String, Scalar)>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Parameter gradients in registration order; missing entries are zero.
    pub fn params<'a>(&'a self, tape: &'a Tape) -> impl Iterator<Item = (&'a str, Tensor)> + 'a {
        self.params.iter().map(move |(n, v)| {
            let g = self
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
            (n.as_str(), g)
        })
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Names of the recorded operations in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Scale the backward rule of every `op` by `factor`. Test fixture for the
    /// gradient checker's negative control.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, op: &str, factor: Scalar) {
        self.fault = Some((op.to_string(), factor));
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.leaf(value, true);
        self.params.push((name.into(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Record a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Operand>) -> Result<Var> {
        match (op, b) {
            (ElementwiseOp::Binary(k), Some(Operand::Var(b))) => self.binary(k, a, b),
            (ElementwiseOp::Binary(k), Some(Operand::Scalar(s))) => self.with_scalar(k, a, s),
            (ElementwiseOp::Unary(k), None) => self.unary(k, a),
            (op, b) => Err(Error::InvalidArgument(format!(
                "operand {b:?} does not fit {op:?}"
            ))),
        }
    }

    /// Tensor-tensor element-wise operation. A single-element operand is
    /// broadcast as a scalar; all other shape pairs must be equal.
    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            if self.value(b).is_scalar() && !self.nodes[b.0].requires_grad {
                let s = self.value(b).data()[0];
                return self.with_scalar(kind, a, s);
            }
            return Err(Error::shape("elementwise", sa, sb));
        }
        let x = self.value(a).data();
        let y = self.value(b).data();
        let data: Vec<Scalar> = match kind {
            BinaryOp::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
            BinaryOp::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
            BinaryOp::Mul => x.iter().zip(y).map(|(p, q)| p * q).collect(),
            BinaryOp::Div => x.iter().zip(y).map(|(p, q)| p / q).collect(),
        };
        let value = Tensor::new(sa, data)?;
        self.push(value, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn with_scalar(&mut self, kind: BinaryOp, a: Var, s: Scalar) -> Result<Var> {
        let value = self.value(a).map(|v| match kind {
            BinaryOp::Add => v + s,
            BinaryOp::Sub => v - s,
            BinaryOp::Mul => v * s,
            BinaryOp::Div => v / s,
        });
        self.push(value, Op::WithScalar(kind, a, s), &[a])
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| match kind {
            UnaryOp::LeakyRelu(slope) => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            UnaryOp::Sigmoid => sigmoid(v),
            UnaryOp::Tanh => v.tanh(),
            UnaryOp::Square => v * v,
        });
        self.push(value, Op::Unary(kind, a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, s: Scalar) -> Result<Var> {
        self.with_scalar(BinaryOp::Mul, a, s)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: Scalar) -> Result<Var> {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// Add a `[n]` bias to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.value(a).channels();
        if self.shape(bias) != [n] {
            return Err(Error::shape("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_exact_mut(n) {
            for (o, &v) in row.iter_mut().zip(b) {
                *o += v;
            }
        }
        self.push(value, Op::AddBias(a, bias), &[a, bias])
    }

    /// Same-padded convolution of a `[h, w, cin]` input with a
    /// `[k, k, cin, cout]` kernel (`k` is 1 or 3) and `[cout]` bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let dims = self.conv_dims(input, kernel)?;
        if self.shape(bias) != [dims.out_channels] {
            return Err(Error::shape("conv2d", self.shape(kernel), self.shape(bias)));
        }
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(&[dims.height, dims.width, dims.out_channels], data)?;
        self.push(value, Op::Conv2d { input, kernel, bias }, &[input, kernel, bias])
    }

    fn conv_dims(&self, input: Var, kernel: Var) -> Result<ConvDims> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 || sk[0] != sk[1] || !matches!(sk[0], 1 | 3) {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("input {si:?}, kernel {sk:?}"),
            });
        }
        if si[2] != sk[2] {
            return Err(Error::shape("conv2d", si, sk));
        }
        Ok(ConvDims {
            height: si[0],
            width: si[1],
            in_channels: si[2],
            out_channels: sk[3],
            kernel: sk[0],
        })
    }

    /// Bilinear samples of a `[rows, cols, c]` plane. `coords` has shape
    /// `[.., 2]` holding `(px, py)` in grid units (column, row), clamped to
    /// the grid; the result has shape `[.., c]`.
    pub fn sample2d(&mut self, plane: Var, coords: Var) -> Result<Var> {
        let sp = self.shape(plane);
        let sc = self.shape(coords);
        if sp.len() != 3 || sc.last() != Some(&2) {
            return Err(Error::shape("bilinear_sample2d", sp, sc));
        }
        if sp[0] < 2 || sp[1] < 2 {
            return Err(Error::InvalidShape {
                op: "bilinear_sample2d",
                detail: format!("grid extent below 2: {sp:?}"),
            });
        }
        let dims = (sp[0], sp[1], sp[2]);
        let mut shape = sc[..sc.len() - 1].to_vec();
        shape.push(sp[2]);
        let data = kernels::sample2d_forward(self.value(plane).data(), dims, self.value(coords).data());
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Sample2d { plane, coords }, &[plane, coords])
    }

    /// Trilinear samples of a `[depth, rows, cols, c]` volume at `[.., 3]`
    /// coordinates `(px, py, pz)` = (column, row, slice).
    pub fn sample3d(&mut self, volume: Var, coords: Var) -> Result<Var> {
        let sv = self.shape(volume);
        let sc = self.shape(coords);
        if sv.len() != 4 || sc.last() != Some(&3) {
            return Err(Error::shape("trilinear_sample3d", sv, sc));
        }
        if sv[..3].iter().any(|&d| d < 2) {
            return Err(Error::InvalidShape {
                op: "trilinear_sample3d",
                detail: format!("grid extent below 2: {sv:?}"),
            });
        }
        let dims = (sv[0], sv[1], sv[2], sv[3]);
        let mut shape = sc[..sc.len() - 1].to_vec();
        shape.push(sv[3]);
        let data = kernels::sample3d_forward(self.value(volume).data(), dims, self.value(coords).data());
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Sample3d { volume, coords }, &[volume, coords])
    }

    /// Concatenate along the trailing axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Concat(parts.to_vec()), parts)
    }

    /// Channels `start..start + len` of the trailing axis.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let c = *s.last().unwrap();
        if len == 0 || start + len > c {
            return Err(Error::InvalidArgument(format!(
                "narrow {start}..{} of {c} channels",
                start + len
            )));
        }
        let data: Vec<Scalar> = self
            .value(input)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Narrow { input, start, len }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, Op::Reshape(input), &[input])
    }

    /// Normalized bilinear forward splatting of `[n, m, c]` features by a
    /// `[n, m, 2]` flow holding `(dx, dy)` in cells.
    pub fn forward_warp(&mut self, features: Var, flow: Var) -> Result<Var> {
        let sf = self.shape(features);
        let sw = self.shape(flow);
        if sf.len() != 3 || sw.len() != 3 || sf[..2] != sw[..2] || sw[2] != 2 {
            return Err(Error::shape("forward_warp", sf, sw));
        }
        if !self.value(flow).all_finite() {
            return Err(Error::NonFinite { op: "forward_warp" });
        }
        let dims = (sf[0], sf[1], sf[2]);
        let shape = sf.to_vec();
        let (data, weight_sum) =
            kernels::forward_warp(self.value(features).data(), self.value(flow).data(), dims);
        let value = Tensor::new(&shape, data)?;
        self.push(
            value,
            Op::ForwardWarp {
                features,
                flow,
                weight_sum,
            },
            &[features, flow],
        )
    }

    /// `mask * a + (1 - mask) * b` with a `[.., 1]` mask broadcast over the
    /// channels of `[.., c]` operands.
    pub fn mask_blend(&mut self, mask: Var, a: Var, b: Var) -> Result<Var> {
        let (sm, sa, sb) = (self.shape(mask), self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mask_blend", sa, sb));
        }
        if sm.last() != Some(&1) || sm[..sm.len() - 1] != sa[..sa.len() - 1] {
            return Err(Error::shape("mask_blend", sm, sa));
        }
        let c = *sa.last().unwrap();
        let m = self.value(mask).data();
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data: Vec<Scalar> = (0..x.len())
            .map(|i| {
                let w = m[i / c];
                w * x[i] + (1.0 - w) * y[i]
            })
            .collect();
        let value = Tensor::new(sa, data)?;
        self.push(value, Op::MaskBlend { mask, a, b }, &[mask, a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: Scalar = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::shape("mse", sp, st));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let s: Scalar = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(s / p.len() as Scalar);
        self.push(value, Op::Mse { pred, target }, &[pred, target])
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("loss must have one element, got {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<Scalar>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let factor = match &self.fault {
                Some((name, f)) if name == node.op.name() => *f,
                _ => 1.0,
            };
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut grads,
                factor,
            };
            self.backward_node(node, &g, &mut acc)?;
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[Scalar], acc: &mut Accumulator) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (x, y) = (val(*a), val(*b));
                match kind {
                    BinaryOp::Add => {
                        acc.add(*a, || g.to_vec());
                        acc.add(*b, || g.to_vec());
                    }
                    BinaryOp::Sub => {
                        acc.add(*a, || g.to_vec());
                        acc.add(*b, || g.iter().map(|v| -v).collect());
                    }
                    BinaryOp::Mul => {
                        acc.add(*a, || g.iter().zip(y).map(|(g, y)| g * y).collect());
                        acc.add(*b, || g.iter().zip(x).map(|(g, x)| g * x).collect());
                    }
                    BinaryOp::Div => {
                        acc.add(*a, || g.iter().zip(y).map(|(g, y)| g / y).collect());
                        acc.add(*b, || {
                            g.iter()
                                .zip(x.iter().zip(y))
                                .map(|(g, (x, y))| -g * x / (y * y))
                                .collect()
                        });
                    }
                }
            }
            Op::WithScalar(kind, a, s) => match kind {
                BinaryOp::Add | BinaryOp::Sub => acc.add(*a, || g.to_vec()),
                BinaryOp::Mul => acc.add(*a, || g.iter().map(|g| g * s).collect()),
                BinaryOp::Div => acc.add(*a, || g.iter().map(|g| g / s).collect()),
            },
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = node.value.data();
                acc.add(*a, || match kind {
                    UnaryOp::LeakyRelu(slope) => g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                        .collect(),
                    UnaryOp::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    UnaryOp::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    UnaryOp::Square => g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let dims = (sa[0], sa[1], sb[1]);
                let (da, db) = kernels::matmul_backward(
                    val(*a),
                    val(*b),
                    g,
                    dims,
                    acc.needs(*a),
                    acc.needs(*b),
                );
                acc.add_opt(*a, da);
                acc.add_opt(*b, db);
            }
            Op::AddBias(a, bias) => {
                acc.add(*a, || g.to_vec());
                let n = self.shape(*bias)[0];
                acc.add(*bias, || {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    db
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let dims = self.conv_dims(*input, *kernel)?;
                let (di, dk, db) =
                    kernels::conv2d_backward(val(*input), val(*kernel), g, dims, acc.needs(*input));
                acc.add_opt(*input, di);
                acc.add(*kernel, || dk);
                acc.add(*bias, || db);
            }
            Op::Sample2d { plane, coords } => {
                let sp = self.shape(*plane);
                let (dp, dc) = kernels::sample2d_backward(
                    val(*plane),
                    (sp[0], sp[1], sp[2]),
                    val(*coords),
                    g,
                    acc.needs(*plane),
                    acc.needs(*coords),
                );
                acc.add_opt(*plane, dp);
                acc.add_opt(*coords, dc);
            }
            Op::Sample3d { volume, coords } => {
                let sv = self.shape(*volume);
                let (dv, dc) = kernels::sample3d_backward(
                    val(*volume),
                    (sv[0], sv[1], sv[2], sv[3]),
                    val(*coords),
                    g,
                    acc.needs(*volume),
                    acc.needs(*coords),
                );
                acc.add_opt(*volume, dv);
                acc.add_opt(*coords, dc);
            }
            Op::Concat(parts) => {
                let total = node.value.channels();
                let rows = node.value.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).channels();
                    acc.add(p, || {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        d
                    });
                    offset += w;
                }
            }
            Op::Narrow { input, start, len } => {
                let c = self.value(*input).channels();
                acc.add(*input, || {
                    let mut d = vec![0.0; self.value(*input).len()];
                    for (row, gr) in d.chunks_exact_mut(c).zip(g.chunks_exact(*len)) {
                        row[*start..start + len].copy_from_slice(gr);
                    }
                    d
                });
            }
            Op::Reshape(a) => acc.add(*a, || g.to_vec()),
            Op::ForwardWarp {
                features,
                flow,
                weight_sum,
            } => {
                let s = self.shape(*features);
                let (df, dfl) = kernels::forward_warp_backward(
                    val(*features),
                    val(*flow),
                    node.value.data(),
                    weight_sum,
                    g,
                    (s[0], s[1], s[2]),
                );
                acc.add(*features, || df);
                acc.add(*flow, || dfl);
            }
            Op::MaskBlend { mask, a, b } => {
                let c = self.value(*a).channels();
                let m = val(*mask);
                let (x, y) = (val(*a), val(*b));
                acc.add(*a, || g.iter().enumerate().map(|(i, g)| g * m[i / c]).collect());
                acc.add(*b, || {
                    g.iter()
                        .enumerate()
                        .map(|(i, g)| g * (1.0 - m[i / c]))
                        .collect()
                });
                acc.add(*mask, || {
                    m.iter()
                        .enumerate()
                        .map(|(r, _)| {
                            (r * c..(r + 1) * c)
                                .map(|i| g[i] * (x[i] - y[i]))
                                .sum()
                        })
                        .collect()
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc.add(*a, || vec![g[0]; n]);
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let k = 2.0 * g[0] / p.len() as Scalar;
                acc.add(*pred, || p.iter().zip(t).map(|(p, t)| k * (p - t)).collect());
                acc.add(*target, || p.iter().zip(t).map(|(p, t)| -k * (p - t)).collect());
            }
        }
        Ok(())
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<Scalar>>],
    factor: Scalar,
}

impl Accumulator<'_> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, contrib: impl FnOnce() -> Vec<Scalar>) {
        if self.needs(v) {
            self.add_opt(v, Some(contrib()));
        }
    }

    fn add_opt(&mut self, v: Var, contrib: Option<Vec<Scalar>>) {
        let Some(mut c) = contrib else { return };
        if !self.needs(v) {
            return;
        }
        if self.factor != 1.0 {
            c.iter_mut().for_each(|x| *x *= self.factor);
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(c) {
                    *e += x;
                }
            }
            slot => *slot = Some(c),
        }
    }
}

#[inline]
pub fn sigmoid(v: Scalar) -> Scalar {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
