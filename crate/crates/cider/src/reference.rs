//! Double-precision scalar-loop reference implementations.
//!
//! Everything here is written independently of the production code paths
//! (plain nested loops over `f64` buffers) and exists to serve as the
//! finite-difference / equivalence oracle in tests. Not part of the public
//! API surface.
#![doc(hidden)]

use crate::tensor::{Filter2d, Kernel, Tensor};

/// Rank-3 f64 buffer with the same layout as [`Tensor`].
#[derive(Debug, Clone)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn from_tensor(t: &Tensor) -> Grid {
        Grid {
            channels: t.channels(),
            height: t.height(),
            width: t.width(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Grid {
        Grid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, i: isize, j: isize) -> f64 {
        // replicate boundary
        let ii = i.clamp(0, self.height as isize - 1) as usize;
        let jj = j.clamp(0, self.width as isize - 1) as usize;
        self.data[(c * self.height + ii) * self.width + jj]
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }
}

/// Per-channel 2D convolution with replicate boundary.
pub fn conv_fixed(x: &Grid, f: &Filter2d) -> Grid {
    let (rh, rw) = (f.height() as isize / 2, f.width() as isize / 2);
    let mut out = Grid::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        for i in 0..x.height {
            for j in 0..x.width {
                let mut acc = 0.0;
                for u in 0..f.height() {
                    for v in 0..f.width() {
                        acc += f.get(u, v) as f64
                            * x.get(c, i as isize + rh - u as isize, j as isize + rw - v as isize);
                    }
                }
                out.set(c, i, j, acc);
            }
        }
    }
    out
}

/// NN-style multi-channel correlation (stride 1 or 2, replicate boundary).
pub fn conv_mc(x: &Grid, weight: &[f32], bias: Option<&[f32]>, out_c: usize, k: usize, stride: usize) -> Grid {
    let r = k as isize / 2;
    let (oh, ow) = (x.height.div_ceil(stride), x.width.div_ceil(stride));
    let mut out = Grid::zeros(out_c, oh, ow);
    for o in 0..out_c {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for c in 0..x.channels {
                    for u in 0..k {
                        for v in 0..k {
                            acc += weight[((o * x.channels + c) * k + u) * k + v] as f64
                                * x.get(
                                    c,
                                    (i * stride) as isize + u as isize - r,
                                    (j * stride) as isize + v as isize - r,
                                );
                        }
                    }
                }
                out.set(o, i, j, acc);
            }
        }
    }
    out
}

pub fn leaky_relu(x: &Grid, slope: f64) -> Grid {
    Grid {
        channels: x.channels,
        height: x.height,
        width: x.width,
        data: x
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect(),
    }
}

pub fn sigmoid(x: &Grid) -> Grid {
    Grid {
        channels: x.channels,
        height: x.height,
        width: x.width,
        data: x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}

pub fn instance_norm(x: &Grid, scale: &[f32], shift: &[f32], eps: f64) -> Grid {
    let n = (x.height * x.width) as f64;
    let mut out = Grid::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        let base = c * x.height * x.width;
        let slice = &x.data[base..base + x.height * x.width];
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (idx, &v) in slice.iter().enumerate() {
            out.data[base + idx] = scale[c] as f64 * ((v - mean) * inv) + shift[c] as f64;
        }
    }
    out
}

pub fn upsample2(x: &Grid) -> Grid {
    let mut out = Grid::zeros(x.channels, x.height * 2, x.width * 2);
    for c in 0..x.channels {
        for i in 0..x.height * 2 {
            for j in 0..x.width * 2 {
                out.set(c, i, j, x.at(c, i / 2, j / 2));
            }
        }
    }
    out
}

pub fn concat(parts: &[&Grid]) -> Grid {
    let (h, w) = (parts[0].height, parts[0].width);
    let channels = parts.iter().map(|p| p.channels).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Grid {
        channels,
        height: h,
        width: w,
        data,
    }
}

pub fn crop(x: &Grid, h: usize, w: usize) -> Grid {
    let mut out = Grid::zeros(x.channels, h, w);
    for c in 0..x.channels {
        for i in 0..h {
            for j in 0..w {
                out.set(c, i, j, x.at(c, i, j));
            }
        }
    }
    out
}

/// Mean SSIM (11x11 Gaussian sigma 1.5, unit range) between single-channel grids.
pub fn ssim(a: &Grid, b: &Grid) -> f64 {
    let size = 11usize;
    let sigma = 1.5f64;
    let c = (size / 2) as f64;
    let mut win = vec![0f64; size * size];
    let mut sum = 0.0;
    for i in 0..size {
        for j in 0..size {
            let v = (-(((i as f64 - c).powi(2) + (j as f64 - c).powi(2))) / (2.0 * sigma * sigma))
                .exp();
            win[i * size + j] = v;
            sum += v;
        }
    }
    for v in &mut win {
        *v /= sum;
    }
    let (c1, c2) = (1e-4f64, 9e-4f64);
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..size {
                for v in 0..size {
                    let av = a.get(0, i as isize + u as isize - 5, j as isize + v as isize - 5);
                    let bv = b.get(0, i as isize + u as isize - 5, j as isize + v as isize - 5);
                    let wt = win[u * size + v];
                    ma += wt * av;
                    mb += wt * bv;
                    maa += wt * av * av;
                    mbb += wt * bv * bv;
                    mab += wt * av * bv;
                }
            }
            let (va, vb, cov) = (maa - ma * ma, mbb - mb * mb, mab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (h * w) as f64
}

pub fn hessian_l1(x: &Grid) -> f64 {
    let (h, w) = (x.height, x.width);
    let mut total = 0.0;
    for c in 0..x.channels {
        for i in 0..h {
            for j in 1..w.saturating_sub(1) {
                total += (x.at(c, i, j - 1) - 2.0 * x.at(c, i, j) + x.at(c, i, j + 1)).abs();
            }
        }
        for i in 1..h.saturating_sub(1) {
            for j in 0..w {
                total += (x.at(c, i - 1, j) - 2.0 * x.at(c, i, j) + x.at(c, i + 1, j)).abs();
            }
        }
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                total += 2.0
                    * (x.at(c, i + 1, j + 1) - x.at(c, i + 1, j) - x.at(c, i, j + 1)
                        + x.at(c, i, j))
                    .abs();
            }
        }
    }
    total
}

pub fn sparsity_l1(x: &Grid) -> f64 {
    x.data.iter().map(|v| v.abs()).sum()
}

/// `alpha * (1 - ssim(x (*) k, y)) + lambda * hessian(x) [+ beta * |x|_1]`.
pub fn total_loss(x: &Grid, k: &Kernel, y: &Grid, alpha: f64, lambda: f64, beta: f64) -> f64 {
    let reblur = conv_fixed(x, k.filter());
    let data = 1.0 - ssim(&reblur, y);
    let mut total = alpha * data + lambda * hessian_l1(x);
    if beta > 0.0 {
        total += beta * sparsity_l1(x);
    }
    total
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub worst_param: String,
    pub worst_index: usize,
    pub ad: f64,
    pub fd: f64,
    pub max_rel_err: f64,
}

/// Compare autodiff gradients against central finite differences of an
/// `f64` reference evaluation (step 1e-3, divided by the realized f32 step).
pub fn compare_grads_to_fd<F>(
    params: &crate::autodiff::ParamSet,
    grad_of: impl Fn(&str) -> Tensor,
    eval: F,
) -> FdReport
where
    F: Fn(&crate::autodiff::ParamSet) -> f64,
{
    let mut report = FdReport {
        worst_param: String::new(),
        worst_index: 0,
        ad: 0.0,
        fd: 0.0,
        max_rel_err: 0.0,
    };
    for (name, tensor) in params.iter() {
        let ad = grad_of(name);
        for idx in 0..tensor.numel() {
            let w = tensor.data()[idx];
            let wp = (w as f64 + 1e-3) as f32;
            let wm = (w as f64 - 1e-3) as f32;
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[idx] = wp;
            let fp = eval(&p);
            p.get_mut(name).unwrap().data_mut()[idx] = wm;
            let fm = eval(&p);
            let fd = (fp - fm) / (wp as f64 - wm as f64);
            let a = ad.data()[idx] as f64;
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report = FdReport {
                    worst_param: name.clone(),
                    worst_index: idx,
                    ad: a,
                    fd,
                    max_rel_err: rel,
                };
            }
        }
    }
    report
}
