//! Reverse sweep over the tape.

use super::{channel_stats, Graph, NodeId, Op};
use crate::error::{CiderError, Result};
use crate::tensor::{self, Tensor};

impl Graph {
    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        debug_assert_eq!(self.nodes[id.0].value.shape(), delta.shape());
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            None => self.nodes[id.0].grad = Some(delta),
        }
    }

    /// Populate gradients of every node the scalar `loss` depends on.
    ///
    /// Nodes are visited exactly once, in reverse tape order, so gradients
    /// accumulate exactly once per edge. Calling `backward` again without
    /// [`Graph::reset_grads`] keeps accumulating.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1, 1) {
            return Err(CiderError::Contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.accumulate(loss, Tensor::full(1, 1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.clone().expect("checked above");
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(b), |gv, bv| gv * bv)?;
                    let db = g.zip_map(self.value(a), |gv, av| gv * av)?;
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Div(a, b) => {
                    let da = g.zip_map(self.value(b), |gv, bv| gv / bv)?;
                    let db = {
                        let av = self.value(a);
                        let bv = self.value(b);
                        let mut out = g.clone();
                        for ((o, &x), &y) in
                            out.data_mut().iter_mut().zip(av.data()).zip(bv.data())
                        {
                            *o = -*o * x / (y * y);
                        }
                        out
                    };
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::AddScalar(a, _) => self.accumulate(a, g),
                Op::ScalarMul(a, c) => self.accumulate(a, g.map(|v| v * c as f32)),
                Op::Abs(a) => {
                    let da = g.zip_map(self.value(a), |gv, av| {
                        if av > 0.0 {
                            gv
                        } else if av < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let da =
                        g.zip_map(self.value(a), |gv, av| if av >= 0.0 { gv } else { gv * slope })?;
                    self.accumulate(a, da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let da = g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))?;
                    self.accumulate(a, da);
                }
                Op::SigmoidCorrupted(a) => {
                    // wrong on purpose: derivative scaled by 1.5
                    let y = &self.nodes[idx].value;
                    let da = g.zip_map(y, |gv, yv| 1.5 * gv * yv * (1.0 - yv))?;
                    self.accumulate(a, da);
                }
                Op::ConvFixed {
                    input,
                    filter,
                    mode,
                    correlate,
                } => {
                    let da = tensor::filter_conv_channels_adjoint(&g, &filter, mode, correlate);
                    self.accumulate(input, da);
                }
                Op::ConvMc {
                    input,
                    weight,
                    bias,
                    out_c,
                    kh,
                    kw,
                    stride,
                    mode,
                } => {
                    let in_shape = self.value(input).shape();
                    let din = tensor::conv_mc_grad_input(
                        &g,
                        self.value(weight).data(),
                        in_shape,
                        kh,
                        kw,
                        stride,
                        mode,
                    );
                    let gw = tensor::conv_mc_grad_weight(&g, self.value(input), kh, kw, stride, mode);
                    let dw = Tensor::from_vec(out_c * in_shape.0, kh, kw, gw)?;
                    self.accumulate(input, din);
                    self.accumulate(weight, dw);
                    if let Some(b) = bias {
                        let gb = tensor::conv_mc_grad_bias(&g);
                        self.accumulate(b, Tensor::from_vec(out_c, 1, 1, gb)?);
                    }
                }
                Op::Upsample2(a) => {
                    let (c, h, w) = self.value(a).shape();
                    let mut da = Tensor::zeros(c, h, w);
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                let s = g.get(ch, 2 * i, 2 * j)
                                    + g.get(ch, 2 * i, 2 * j + 1)
                                    + g.get(ch, 2 * i + 1, 2 * j)
                                    + g.get(ch, 2 * i + 1, 2 * j + 1);
                                da.set(ch, i, j, s);
                            }
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::ConcatChannels(parts) => {
                    let mut offset = 0usize;
                    for p in parts {
                        let (pc, h, w) = self.value(p).shape();
                        let mut dp = Tensor::zeros(pc, h, w);
                        for ch in 0..pc {
                            dp.channel_mut(ch).copy_from_slice(g.channel(offset + ch));
                        }
                        offset += pc;
                        self.accumulate(p, dp);
                    }
                }
                Op::InstanceNorm {
                    input,
                    scale,
                    shift,
                    eps,
                } => {
                    let x = self.value(input);
                    let (c, h, w) = x.shape();
                    let n = (h * w) as f64;
                    let mut dx = Tensor::zeros(c, h, w);
                    let mut dscale = Tensor::zeros(c, 1, 1);
                    let mut dshift = Tensor::zeros(c, 1, 1);
                    for ch in 0..c {
                        let (mean, inv) = channel_stats(x.channel(ch), eps);
                        let gamma = self.value(scale).get(ch, 0, 0);
                        let src = x.channel(ch);
                        let gch = g.channel(ch);
                        let mut sum_g = 0f64;
                        let mut sum_gx = 0f64;
                        for (&gv, &xv) in gch.iter().zip(src) {
                            let xh = (xv - mean) * inv;
                            sum_g += gv as f64;
                            sum_gx += gv as f64 * xh as f64;
                        }
                        dshift.set(ch, 0, 0, sum_g as f32);
                        dscale.set(ch, 0, 0, sum_gx as f32);
                        let mean_g = (sum_g / n) as f32;
                        let mean_gx = (sum_gx / n) as f32;
                        let dst = dx.channel_mut(ch);
                        for ((d, &gv), &xv) in dst.iter_mut().zip(gch).zip(src) {
                            let xh = (xv - mean) * inv;
                            *d = gamma * inv * (gv - mean_g - xh * mean_gx);
                        }
                    }
                    self.accumulate(input, dx);
                    self.accumulate(scale, dscale);
                    self.accumulate(shift, dshift);
                }
                Op::SumAll(a) => {
                    let gs = g.data()[0];
                    let (c, h, w) = self.value(a).shape();
                    self.accumulate(a, Tensor::full(c, h, w, gs));
                }
                Op::MeanAll(a) => {
                    let (c, h, w) = self.value(a).shape();
                    let gs = g.data()[0] / (c * h * w) as f32;
                    self.accumulate(a, Tensor::full(c, h, w, gs));
                }
                Op::HessianL1(a) => {
                    let gs = g.data()[0];
                    let da = hessian_l1_grad(self.value(a), gs);
                    self.accumulate(a, da);
                }
                Op::Crop { input, h, w } => {
                    let (c, ih, iw) = self.value(input).shape();
                    let mut da = Tensor::zeros(c, ih, iw);
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                da.set(ch, i, j, g.get(ch, i, j));
                            }
                        }
                    }
                    self.accumulate(input, da);
                }
            }
        }
        Ok(())
    }
}

/// Subgradient of the Hessian L1 penalty; sign(0) = 0.
fn hessian_l1_grad(x: &Tensor, gs: f32) -> Tensor {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, h, w);
    let sign = |d: f64| -> f32 {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for ch in 0..c {
        let src: Vec<f64> = x.channel(ch).iter().map(|&v| v as f64).collect();
        let at = |i: usize, j: usize| src[i * w + j];
        let dst = out.channel_mut(ch);
        for i in 0..h {
            for j in 1..w.saturating_sub(1) {
                let s = sign(at(i, j - 1) - 2.0 * at(i, j) + at(i, j + 1)) * gs;
                dst[i * w + j - 1] += s;
                dst[i * w + j] -= 2.0 * s;
                dst[i * w + j + 1] += s;
            }
        }
        for i in 1..h.saturating_sub(1) {
            for j in 0..w {
                let s = sign(at(i - 1, j) - 2.0 * at(i, j) + at(i + 1, j)) * gs;
                dst[(i - 1) * w + j] += s;
                dst[i * w + j] -= 2.0 * s;
                dst[(i + 1) * w + j] += s;
            }
        }
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                let s =
                    2.0 * sign(at(i + 1, j + 1) - at(i + 1, j) - at(i, j + 1) + at(i, j)) * gs;
                dst[(i + 1) * w + j + 1] += s;
                dst[(i + 1) * w + j] -= s;
                dst[i * w + j + 1] -= s;
                dst[i * w + j] += s;
            }
        }
    }
    out
}
