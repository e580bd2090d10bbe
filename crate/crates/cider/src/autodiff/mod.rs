//! Tape-based reverse-mode automatic differentiation over tensors.
//!
//! A [`Graph`] records one forward pass as a flat, topologically-ordered
//! list of nodes; [`Graph::backward`] walks it once in reverse. The tape is
//! rebuilt every iteration, which keeps the engine simple and the memory
//! profile flat.
//!
//! Scalar-producing nodes (reductions, scalar arithmetic) carry an `f64`
//! side value alongside their `f32` tensor so that losses can be read at
//! double precision; reductions and convolution inner loops also accumulate
//! in `f64`.

mod backward;
mod check;

pub use check::{grad_check, GradCheckEntry, GradCheckReport};

use crate::error::{CiderError, Result};
use crate::tensor::{self, BoundaryMode, Filter2d, Tensor};
use std::collections::BTreeMap;

/// Named learnable tensors with deterministic (sorted) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId, f64),
    ScalarMul(NodeId, f64),
    Abs(NodeId),
    LeakyRelu(NodeId, f32),
    Sigmoid(NodeId),
    /// Test fixture with a deliberately wrong derivative; proves the
    /// finite-difference harness can detect broken backward rules.
    SigmoidCorrupted(NodeId),
    ConvFixed {
        input: NodeId,
        filter: Filter2d,
        mode: BoundaryMode,
        correlate: bool,
    },
    ConvMc {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        mode: BoundaryMode,
    },
    Upsample2(NodeId),
    ConcatChannels(Vec<NodeId>),
    InstanceNorm {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f32,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    HessianL1(NodeId),
    Crop {
        input: NodeId,
        h: usize,
        w: usize,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    /// Double-precision side value for scalar-producing nodes.
    pub scalar: Option<f64>,
    pub grad: Option<Tensor>,
    pub op: Op,
}

/// One forward pass recorded as a topologically-ordered tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1x1 node at double precision.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id.0];
        node.scalar.unwrap_or_else(|| node.value.data()[0] as f64)
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of a named parameter after `backward`.
    pub fn param_grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.grad(id))
    }

    pub fn param_ids(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    /// Clear all gradients; the next `backward` starts from scratch.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, scalar: Option<f64>, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            scalar,
            grad: None,
            op,
        });
        id
    }

    /// Constant input; no gradient is reported for it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let scalar = (t.numel() == 1).then(|| t.data()[0] as f64);
        self.push(t, scalar, Op::Leaf)
    }

    /// Named learnable leaf.
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        let scalar = (t.numel() == 1).then(|| t.data()[0] as f64);
        let id = self.push(t, scalar, Op::Leaf);
        self.params.insert(name.to_string(), id);
        id
    }

    fn require_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CiderError::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let scalar = match (self.nodes[a.0].scalar, self.nodes[b.0].scalar) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        Ok(self.push(value, scalar, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let scalar = match (self.nodes[a.0].scalar, self.nodes[b.0].scalar) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        };
        Ok(self.push(value, scalar, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let scalar = match (self.nodes[a.0].scalar, self.nodes[b.0].scalar) {
            (Some(x), Some(y)) => Some(x * y),
            _ => None,
        };
        Ok(self.push(value, scalar, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("div", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        let scalar = match (self.nodes[a.0].scalar, self.nodes[b.0].scalar) {
            (Some(x), Some(y)) => Some(x / y),
            _ => None,
        };
        Ok(self.push(value, scalar, Op::Div(a, b)))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|x| x + c as f32);
        let scalar = self.nodes[a.0].scalar.map(|x| x + c);
        self.push(value, scalar, Op::AddScalar(a, c))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|x| x * c as f32);
        let scalar = self.nodes[a.0].scalar.map(|x| x * c);
        self.push(value, scalar, Op::ScalarMul(a, c))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f32::abs);
        let scalar = self.nodes[a.0].scalar.map(f64::abs);
        self.push(value, scalar, Op::Abs(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f32) -> NodeId {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        let scalar = self.nodes[a.0]
            .scalar
            .map(|x| if x >= 0.0 { x } else { slope as f64 * x });
        self.push(value, scalar, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let scalar = self.nodes[a.0].scalar.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, scalar, Op::Sigmoid(a))
    }

    #[doc(hidden)]
    pub fn sigmoid_corrupted(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, None, Op::SigmoidCorrupted(a))
    }

    /// Per-channel filtering with a fixed (non-learnable) 2D filter.
    pub fn conv_fixed(
        &mut self,
        input: NodeId,
        filter: &Filter2d,
        mode: BoundaryMode,
        correlate: bool,
    ) -> NodeId {
        let value = tensor::filter_conv_channels(self.value(input), filter, mode, correlate);
        self.push(
            value,
            None,
            Op::ConvFixed {
                input,
                filter: filter.clone(),
                mode,
                correlate,
            },
        )
    }

    /// Learnable multi-channel correlation. `weight` is a parameter node of
    /// shape `(out_c * in_c, kh, kw)`; `bias`, when present, is `(out_c, 1, 1)`.
    /// `stride` may be 1 or 2; stride 2 halves the spatial dims.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        out_c: usize,
        stride: usize,
        mode: BoundaryMode,
    ) -> Result<NodeId> {
        let (in_c, _, _) = self.value(input).shape();
        let (wc, kh, kw) = self.value(weight).shape();
        if wc != out_c * in_c {
            return Err(CiderError::shape(
                "conv2d",
                (in_c, out_c),
                self.value(weight).shape(),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(CiderError::Config(format!(
                "conv2d kernel dims must be odd, got {kh}x{kw}"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(CiderError::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != (out_c, 1, 1) {
                return Err(CiderError::shape("conv2d bias", (out_c, 1, 1), self.value(b).shape()));
            }
        }
        let value = tensor::conv_mc(
            self.value(input),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            out_c,
            kh,
            kw,
            stride,
            mode,
        );
        Ok(self.push(
            value,
            None,
            Op::ConvMc {
                input,
                weight,
                bias,
                out_c,
                kh,
                kw,
                stride,
                mode,
            },
        ))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (c, h, w) = t.shape();
        let value = Tensor::from_fn(c, 2 * h, 2 * w, |ch, i, j| t.get(ch, i / 2, j / 2));
        self.push(value, None, Op::Upsample2(a))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (_, h, w) = self.value(parts[0]).shape();
        for &p in parts {
            let (_, ph, pw) = self.value(p).shape();
            if (ph, pw) != (h, w) {
                return Err(CiderError::shape("concat_channels", (h, w), (ph, pw)));
            }
        }
        let tensors: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let value = Tensor::stack_channels(&tensors)?;
        Ok(self.push(value, None, Op::ConcatChannels(parts.to_vec())))
    }

    /// Per-map normalization: `y = scale * (x - mean) / sqrt(var + eps) + shift`.
    /// `scale` and `shift` are `(C, 1, 1)` parameter nodes.
    pub fn instance_norm(
        &mut self,
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f32,
    ) -> Result<NodeId> {
        let (c, h, w) = self.value(input).shape();
        if self.value(scale).shape() != (c, 1, 1) || self.value(shift).shape() != (c, 1, 1) {
            return Err(CiderError::shape(
                "instance_norm",
                (c, 1, 1),
                self.value(scale).shape(),
            ));
        }
        let x = self.value(input);
        let mut value = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let (mean, inv) = channel_stats(x.channel(ch), eps);
            let gamma = self.value(scale).get(ch, 0, 0);
            let delta = self.value(shift).get(ch, 0, 0);
            let src = x.channel(ch);
            let dst = value.channel_mut(ch);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = gamma * ((s - mean) * inv) + delta;
            }
        }
        Ok(self.push(
            value,
            None,
            Op::InstanceNorm {
                input,
                scale,
                shift,
                eps,
            },
        ))
    }

    /// Sum of all elements as a 1x1x1 node (f64 accumulation).
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].scalar.unwrap_or_else(|| self.value(a).sum());
        let value = Tensor::from_vec(1, 1, 1, vec![s as f32]).expect("finite sum");
        self.push(value, Some(s), Op::SumAll(a))
    }

    /// Mean of all elements as a 1x1x1 node (f64 accumulation).
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s = self.nodes[a.0]
            .scalar
            .unwrap_or_else(|| self.value(a).sum() / n);
        let value = Tensor::from_vec(1, 1, 1, vec![s as f32]).expect("finite mean");
        self.push(value, Some(s), Op::MeanAll(a))
    }

    /// L1 norm of discrete second differences:
    /// `sum |d_xx| + sum |d_yy| + 2 sum |d_xy|` over interior stencils.
    pub fn hessian_l1(&mut self, a: NodeId) -> NodeId {
        let s = hessian_l1_value(self.value(a));
        let value = Tensor::from_vec(1, 1, 1, vec![s as f32]).expect("finite hessian");
        self.push(value, Some(s), Op::HessianL1(a))
    }

    /// Top-left crop to `h` x `w`.
    pub fn crop(&mut self, a: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (_, ih, iw) = self.value(a).shape();
        if h > ih || w > iw {
            return Err(CiderError::shape("crop", (ih, iw), (h, w)));
        }
        let value = self.value(a).crop(h, w);
        Ok(self.push(value, None, Op::Crop { input: a, h, w }))
    }
}

/// Channel mean and 1/sqrt(var + eps) with f64 accumulation.
pub(crate) fn channel_stats(data: &[f32], eps: f32) -> (f32, f32) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + eps as f64).sqrt();
    (mean as f32, inv as f32)
}

pub(crate) fn hessian_l1_value(x: &Tensor) -> f64 {
    let (c, h, w) = x.shape();
    let mut total = 0f64;
    for ch in 0..c {
        let m = x.channel(ch);
        let at = |i: usize, j: usize| m[i * w + j] as f64;
        for i in 0..h {
            for j in 1..w.saturating_sub(1) {
                total += (at(i, j - 1) - 2.0 * at(i, j) + at(i, j + 1)).abs();
            }
        }
        for i in 1..h.saturating_sub(1) {
            for j in 0..w {
                total += (at(i - 1, j) - 2.0 * at(i, j) + at(i + 1, j)).abs();
            }
        }
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                total += 2.0 * (at(i + 1, j + 1) - at(i + 1, j) - at(i, j + 1) + at(i, j)).abs();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests;
