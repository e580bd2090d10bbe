//! Deterministic spatial convolution and correlation.
//!
//! All variants share one structure: boundary-extend the input into an
//! explicit padded buffer, then run a valid-region correlation with `f64`
//! row accumulators. Parallelism is only ever across channels, and each
//! output element is produced by a single sequential inner loop, so results
//! are bit-identical regardless of thread count.

use super::{BoundaryMode, Filter2d, Kernel, Tensor};
use crate::error::{CiderError, Result};
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch costs more than it saves.
const PAR_MIN_MACS: usize = 250_000;

/// Boundary-extend every channel by `rh`/`rw` samples per side.
pub(crate) fn pad(t: &Tensor, rh: usize, rw: usize, mode: BoundaryMode) -> Tensor {
    let (c, h, w) = t.shape();
    let (ph, pw) = (h + 2 * rh, w + 2 * rw);
    let mut out = Tensor::zeros(c, ph, pw);
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = out.channel_mut(ch);
        for s in 0..ph {
            let si = mode.map(s as isize - rh as isize, h);
            let src_row = &src[si * w..(si + 1) * w];
            let dst_row = &mut dst[s * pw..(s + 1) * pw];
            for (tt, d) in dst_row.iter_mut().enumerate() {
                let tj = mode.map(tt as isize - rw as isize, w);
                *d = src_row[tj];
            }
        }
    }
    out
}

/// Exact adjoint of [`pad`]: fold padded-border gradients back onto their
/// source samples.
pub(crate) fn pad_adjoint(
    gpad: &Tensor,
    rh: usize,
    rw: usize,
    mode: BoundaryMode,
    h: usize,
    w: usize,
) -> Tensor {
    let (c, ph, pw) = gpad.shape();
    debug_assert_eq!((ph, pw), (h + 2 * rh, w + 2 * rw));
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = gpad.channel(ch);
        let dst = out.channel_mut(ch);
        for s in 0..ph {
            let si = mode.map(s as isize - rh as isize, h);
            let src_row = &src[s * pw..(s + 1) * pw];
            let dst_row = &mut dst[si * w..(si + 1) * w];
            for (tt, &g) in src_row.iter().enumerate() {
                let tj = mode.map(tt as isize - rw as isize, w);
                dst_row[tj] += g;
            }
        }
    }
    out
}

/// Valid-region correlation of one padded channel with `taps`, striding the
/// input grid. `out` is `oh` x `ow`; `padded` is `ph` x `pw`.
fn valid_corr_channel(
    padded: &[f32],
    pw: usize,
    taps: &[f32],
    fh: usize,
    fw: usize,
    stride: usize,
    out: &mut [f32],
    oh: usize,
    ow: usize,
) {
    let mut acc = vec![0f64; ow];
    for i in 0..oh {
        acc.fill(0.0);
        for u in 0..fh {
            let prow = &padded[(i * stride + u) * pw..(i * stride + u + 1) * pw];
            for v in 0..fw {
                let t = taps[u * fw + v] as f64;
                if t == 0.0 {
                    continue;
                }
                if stride == 1 {
                    for (a, &s) in acc.iter_mut().zip(&prow[v..v + ow]) {
                        *a += t * s as f64;
                    }
                } else {
                    for (j, a) in acc.iter_mut().enumerate() {
                        *a += t * prow[v + stride * j] as f64;
                    }
                }
            }
        }
        for (o, &a) in out[i * ow..(i + 1) * ow].iter_mut().zip(&acc) {
            *o = a as f32;
        }
    }
}

/// Per-channel filtering with a fixed 2D filter; `correlate` selects
/// correlation instead of convolution semantics. Output shape == input shape.
pub(crate) fn filter_conv_channels(
    t: &Tensor,
    f: &Filter2d,
    mode: BoundaryMode,
    correlate: bool,
) -> Tensor {
    let (c, h, w) = t.shape();
    let (rh, rw) = (f.height() / 2, f.width() / 2);
    // convolution == correlation with the 180-degree-rotated filter
    let taps_owned;
    let taps: &Filter2d = if correlate {
        f
    } else {
        taps_owned = f.flipped();
        &taps_owned
    };
    let padded = pad(t, rh, rw, mode);
    let pw = w + 2 * rw;
    let mut out = Tensor::zeros(c, h, w);
    let macs = c * h * w * f.height() * f.width();
    let run = |(ch_out, ch_pad): (&mut [f32], &[f32])| {
        valid_corr_channel(ch_pad, pw, taps.taps(), f.height(), f.width(), 1, ch_out, h, w);
    };
    let pairs: Vec<(&mut [f32], &[f32])> = out
        .data_mut()
        .chunks_mut(h * w)
        .zip(padded.data().chunks((h + 2 * rh) * pw))
        .collect();
    if macs >= PAR_MIN_MACS && c > 1 {
        pairs.into_par_iter().for_each(run);
    } else {
        pairs.into_iter().for_each(run);
    }
    out
}

/// Adjoint of [`filter_conv_channels`] with respect to the input.
pub(crate) fn filter_conv_channels_adjoint(
    gout: &Tensor,
    f: &Filter2d,
    mode: BoundaryMode,
    correlate: bool,
) -> Tensor {
    let (c, h, w) = gout.shape();
    let (rh, rw) = (f.height() / 2, f.width() / 2);
    let taps_owned;
    let taps: &Filter2d = if correlate {
        f
    } else {
        taps_owned = f.flipped();
        &taps_owned
    };
    let (fh, fw) = (f.height(), f.width());
    let (ph, pw) = (h + 2 * rh, w + 2 * rw);
    // grad w.r.t. the padded buffer: full convolution of gout with the taps
    let mut gpad = Tensor::zeros(c, ph, pw);
    for ch in 0..c {
        let g = gout.channel(ch);
        let dst = gpad.channel_mut(ch);
        let mut acc = vec![0f64; pw];
        for p in 0..ph {
            acc.fill(0.0);
            for u in 0..fh {
                let i = p as isize - u as isize;
                if i < 0 || i >= h as isize {
                    continue;
                }
                let grow = &g[i as usize * w..(i as usize + 1) * w];
                for v in 0..fw {
                    let t = taps.taps()[u * fw + v] as f64;
                    if t == 0.0 {
                        continue;
                    }
                    for (a, &gv) in acc[v..v + w].iter_mut().zip(grow) {
                        *a += t * gv as f64;
                    }
                }
            }
            for (d, &a) in dst[p * pw..(p + 1) * pw].iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    pad_adjoint(&gpad, rh, rw, mode, h, w)
}

fn validate_conv_inputs(t: &Tensor, k: &Kernel) -> Result<()> {
    if t.numel() == 0 {
        return Err(CiderError::Input("empty input tensor".into()));
    }
    if !t.is_finite() {
        return Err(CiderError::Input("convolution input contains NaN/Inf".into()));
    }
    // Kernel construction already enforces odd dims and finite weights.
    let _ = k;
    Ok(())
}

/// Same-size 2D convolution of each channel with a blur kernel.
pub fn conv2d_same(t: &Tensor, k: &Kernel, mode: BoundaryMode) -> Result<Tensor> {
    validate_conv_inputs(t, k)?;
    Ok(filter_conv_channels(t, k.filter(), mode, false))
}

/// Same-size 2D correlation; `correlate2d_same(x, k) == conv2d_same(x, flip(k))`.
pub fn correlate2d_same(t: &Tensor, k: &Kernel, mode: BoundaryMode) -> Result<Tensor> {
    validate_conv_inputs(t, k)?;
    Ok(filter_conv_channels(t, k.filter(), mode, true))
}

/// Multi-channel NN-style correlation with optional stride-2 downsampling.
///
/// `weight` is laid out `[out_c][in_c][kh][kw]`; `bias` has `out_c` entries.
pub(crate) fn conv_mc(
    input: &Tensor,
    weight: &[f32],
    bias: Option<&[f32]>,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    mode: BoundaryMode,
) -> Tensor {
    let (in_c, h, w) = input.shape();
    debug_assert_eq!(weight.len(), out_c * in_c * kh * kw);
    let (rh, rw) = (kh / 2, kw / 2);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let padded = pad(input, rh, rw, mode);
    let pw = w + 2 * rw;
    let pad_ch = (h + 2 * rh) * pw;
    let mut out = Tensor::zeros(out_c, oh, ow);
    let macs = out_c * in_c * oh * ow * kh * kw;

    let run = |(o, ch_out): (usize, &mut [f32])| {
        let mut acc = vec![0f64; ow];
        let b = bias.map_or(0.0, |b| b[o] as f64);
        for i in 0..oh {
            acc.fill(b);
            for c in 0..in_c {
                let pch = &padded.data()[c * pad_ch..(c + 1) * pad_ch];
                let wbase = ((o * in_c) + c) * kh * kw;
                for u in 0..kh {
                    let prow = &pch[(i * stride + u) * pw..(i * stride + u + 1) * pw];
                    for v in 0..kw {
                        let t = weight[wbase + u * kw + v] as f64;
                        if t == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            for (a, &s) in acc.iter_mut().zip(&prow[v..v + ow]) {
                                *a += t * s as f64;
                            }
                        } else {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += t * prow[v + stride * j] as f64;
                            }
                        }
                    }
                }
            }
            for (oo, &a) in ch_out[i * ow..(i + 1) * ow].iter_mut().zip(&acc) {
                *oo = a as f32;
            }
        }
    };

    let chunks: Vec<(usize, &mut [f32])> = out
        .data_mut()
        .chunks_mut(oh * ow)
        .take(out_c)
        .enumerate()
        .collect();
    if macs >= PAR_MIN_MACS && out_c > 1 {
        chunks.into_par_iter().for_each(run);
    } else {
        chunks.into_iter().for_each(run);
    }
    out
}

/// Gradient of [`conv_mc`] w.r.t. its input tensor.
pub(crate) fn conv_mc_grad_input(
    gout: &Tensor,
    weight: &[f32],
    in_shape: (usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    mode: BoundaryMode,
) -> Tensor {
    let (in_c, h, w) = in_shape;
    let (out_c, oh, ow) = gout.shape();
    let (rh, rw) = (kh / 2, kw / 2);
    let (ph, pw) = (h + 2 * rh, w + 2 * rw);
    let mut gpad = Tensor::zeros(in_c, ph, pw);
    let macs = out_c * in_c * oh * ow * kh * kw;

    let run = |(c, dst): (usize, &mut [f32])| {
        let mut acc = vec![0f64; pw];
        for p in 0..ph {
            acc.fill(0.0);
            for u in 0..kh {
                let rem = p as isize - u as isize;
                if rem < 0 || rem % stride as isize != 0 {
                    continue;
                }
                let i = (rem / stride as isize) as usize;
                if i >= oh {
                    continue;
                }
                for o in 0..out_c {
                    let grow = &gout.channel(o)[i * ow..(i + 1) * ow];
                    let wbase = ((o * in_c) + c) * kh * kw;
                    for v in 0..kw {
                        let t = weight[wbase + u * kw + v] as f64;
                        if t == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            for (a, &gv) in acc[v..v + ow].iter_mut().zip(grow) {
                                *a += t * gv as f64;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                acc[v + stride * j] += t * gv as f64;
                            }
                        }
                    }
                }
            }
            for (d, &a) in dst[p * pw..(p + 1) * pw].iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    };

    let chunks: Vec<(usize, &mut [f32])> = gpad
        .data_mut()
        .chunks_mut(ph * pw)
        .take(in_c)
        .enumerate()
        .collect();
    if macs >= PAR_MIN_MACS && in_c > 1 {
        chunks.into_par_iter().for_each(run);
    } else {
        chunks.into_iter().for_each(run);
    }
    pad_adjoint(&gpad, rh, rw, mode, h, w)
}

/// Gradient of [`conv_mc`] w.r.t. its weights, `[out_c][in_c][kh][kw]`.
pub(crate) fn conv_mc_grad_weight(
    gout: &Tensor,
    input: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    mode: BoundaryMode,
) -> Vec<f32> {
    let (in_c, h, w) = input.shape();
    let (out_c, oh, ow) = gout.shape();
    let (rh, rw) = (kh / 2, kw / 2);
    let padded = pad(input, rh, rw, mode);
    let pw = w + 2 * rw;
    let pad_ch = (h + 2 * rh) * pw;
    let mut gw = vec![0f32; out_c * in_c * kh * kw];
    let macs = out_c * in_c * oh * ow * kh * kw;

    let run = |(o, gw_o): (usize, &mut [f32])| {
        let g = gout.channel(o);
        for c in 0..in_c {
            let pch = &padded.data()[c * pad_ch..(c + 1) * pad_ch];
            for u in 0..kh {
                for v in 0..kw {
                    let mut acc = 0f64;
                    for i in 0..oh {
                        let grow = &g[i * ow..(i + 1) * ow];
                        let prow = &pch[(i * stride + u) * pw..(i * stride + u + 1) * pw];
                        if stride == 1 {
                            for (&gv, &pv) in grow.iter().zip(&prow[v..v + ow]) {
                                acc += gv as f64 * pv as f64;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                acc += gv as f64 * prow[v + stride * j] as f64;
                            }
                        }
                    }
                    gw_o[c * kh * kw + u * kw + v] = acc as f32;
                }
            }
        }
    };

    let chunks: Vec<(usize, &mut [f32])> =
        gw.chunks_mut(in_c * kh * kw).take(out_c).enumerate().collect();
    if macs >= PAR_MIN_MACS && out_c > 1 {
        chunks.into_par_iter().for_each(run);
    } else {
        chunks.into_iter().for_each(run);
    }
    gw
}

/// Gradient of [`conv_mc`] w.r.t. its bias.
pub(crate) fn conv_mc_grad_bias(gout: &Tensor) -> Vec<f32> {
    (0..gout.channels())
        .map(|o| gout.channel(o).iter().map(|&g| g as f64).sum::<f64>() as f32)
        .collect()
}
