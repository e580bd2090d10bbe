//! Training objective (SSIM data term + Hessian prior + optional sparsity)
//! and evaluation metrics (SSIM, PSNR).

use crate::autodiff::{Graph, NodeId};
use crate::error::{CiderError, Result};
use crate::instrument;
use crate::tensor::{self, BoundaryMode, Filter2d, Image, Kernel};
use serde::{Deserialize, Serialize};

/// Weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// SSIM data-term weight.
    pub alpha: f64,
    /// Hessian-prior weight.
    pub lambda: f64,
    /// Sparsity weight; only applied in microscopy mode.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda: 0.01,
            beta: 0.01,
        }
    }
}

impl LossWeights {
    pub fn effective_beta(&self, microscopy: bool) -> f64 {
        if microscopy {
            self.beta
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.lambda < 0.0 || self.beta < 0.0 {
            return Err(CiderError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// SSIM parameters: 11x11 Gaussian window (sigma 1.5), unit dynamic range.
#[derive(Debug, Clone)]
pub struct SSIMParams {
    pub window: Filter2d,
    pub c1: f32,
    pub c2: f32,
}

impl Default for SSIMParams {
    fn default() -> Self {
        let size = 11usize;
        let sigma = 1.5f64;
        let c = (size / 2) as f64;
        let mut sum = 0.0;
        let mut taps = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let di = i as f64 - c;
                let dj = j as f64 - c;
                let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                sum += v;
                taps.push(v);
            }
        }
        SSIMParams {
            window: Filter2d::new(size, size, taps.iter().map(|&v| (v / sum) as f32).collect())
                .unwrap(),
            c1: 0.01f32 * 0.01,
            c2: 0.03f32 * 0.03,
        }
    }
}

/// Mean structural similarity over the local SSIM map.
pub fn ssim(a: &Image, b: &Image, p: &SSIMParams) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(CiderError::shape(
            "ssim",
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    let mode = BoundaryMode::Replicate;
    let win = |t: &tensor::Tensor| tensor::filter_conv_channels(t, &p.window, mode, false);
    let ta = a.tensor();
    let tb = b.tensor();
    let mu_a = win(ta);
    let mu_b = win(tb);
    let a2 = win(&ta.zip_map(ta, |x, y| x * y)?);
    let b2 = win(&tb.zip_map(tb, |x, y| x * y)?);
    let ab = win(&ta.zip_map(tb, |x, y| x * y)?);
    let n = ta.numel();
    let mut total = 0f64;
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let var_a = a2.data()[i] - ma * ma;
        let var_b = b2.data()[i] - mb * mb;
        let cov = ab.data()[i] - ma * mb;
        let num = (2.0 * ma * mb + p.c1) * (2.0 * cov + p.c2);
        let den = (ma * ma + mb * mb + p.c1) * (var_a + var_b + p.c2);
        total += (num / den) as f64;
    }
    Ok(total / n as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at 100.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(CiderError::shape(
            "psnr",
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

/// Mean SSIM between two graph nodes as a scalar node.
pub fn ssim_node(g: &mut Graph, a: NodeId, b: NodeId, p: &SSIMParams) -> Result<NodeId> {
    let mode = BoundaryMode::Replicate;
    let mu_a = g.conv_fixed(a, &p.window, mode, false);
    let mu_b = g.conv_fixed(b, &p.window, mode, false);
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.conv_fixed(aa, &p.window, mode, false);
    let e_bb = g.conv_fixed(bb, &p.window, mode, false);
    let e_ab = g.conv_fixed(ab, &p.window, mode, false);
    let mu_a2 = g.mul(mu_a, mu_a)?;
    let mu_b2 = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_a2)?;
    let var_b = g.sub(e_bb, mu_b2)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let two_mu = g.scalar_mul(mu_ab, 2.0);
    let num1 = g.add_scalar(two_mu, p.c1 as f64);
    let two_cov = g.scalar_mul(cov, 2.0);
    let num2 = g.add_scalar(two_cov, p.c2 as f64);
    let num = g.mul(num1, num2)?;

    let mu_sum = g.add(mu_a2, mu_b2)?;
    let den1 = g.add_scalar(mu_sum, p.c1 as f64);
    let var_sum = g.add(var_a, var_b)?;
    let den2 = g.add_scalar(var_sum, p.c2 as f64);
    let den = g.mul(den1, den2)?;

    let map = g.div(num, den)?;
    Ok(g.mean_all(map))
}

/// Data term `1 - SSIM(x * k, y)`, differentiable w.r.t. `x`.
pub fn loss_ssim(
    g: &mut Graph,
    x: NodeId,
    k: &Kernel,
    y: NodeId,
    p: &SSIMParams,
) -> Result<NodeId> {
    let reblurred = g.conv_fixed(x, k.filter(), BoundaryMode::Replicate, false);
    let s = ssim_node(g, reblurred, y, p)?;
    let neg = g.scalar_mul(s, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Hessian continuity prior: `|d_xx|_1 + |d_yy|_1 + 2 |d_xy|_1`.
pub fn hessian_reg(g: &mut Graph, x: NodeId) -> NodeId {
    g.hessian_l1(x)
}

/// L1 sparsity on intensities.
pub fn sparsity_l1(g: &mut Graph, x: NodeId) -> NodeId {
    instrument::count_sparsity_term();
    let a = g.abs(x);
    g.sum_all(a)
}

/// Composite objective:
/// `alpha * (1 - SSIM(x*k, y)) + lambda * R(x) [+ beta * |x|_1]`.
pub fn total_loss(
    g: &mut Graph,
    x: NodeId,
    k: &Kernel,
    y: NodeId,
    weights: &LossWeights,
    microscopy: bool,
    p: &SSIMParams,
) -> Result<NodeId> {
    weights.validate()?;
    let data = loss_ssim(g, x, k, y, p)?;
    let data_w = g.scalar_mul(data, weights.alpha);
    let reg = hessian_reg(g, x);
    let reg_w = g.scalar_mul(reg, weights.lambda);
    let mut total = g.add(data_w, reg_w)?;
    let beta = weights.effective_beta(microscopy);
    if beta > 0.0 {
        let sp = sparsity_l1(g, x);
        let sp_w = g.scalar_mul(sp, beta);
        total = g.add(total, sp_w)?;
    }
    Ok(total)
}

/// The three loss components evaluated separately (for traces/diagnostics).
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub ssim_term: f64,
    pub hessian_term: f64,
    pub sparsity_term: f64,
}

pub fn loss_breakdown(
    g: &mut Graph,
    x: NodeId,
    k: &Kernel,
    y: NodeId,
    microscopy: bool,
    p: &SSIMParams,
) -> Result<LossBreakdown> {
    let data = loss_ssim(g, x, k, y, p)?;
    let reg = hessian_reg(g, x);
    let sparsity = if microscopy {
        let a = g.abs(x);
        let s = g.sum_all(a);
        g.scalar_value(s)
    } else {
        0.0
    };
    Ok(LossBreakdown {
        ssim_term: g.scalar_value(data),
        hessian_term: g.scalar_value(reg),
        sparsity_term: sparsity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;
    use crate::rng::Stream;
    use crate::synth::test_chart;
    use crate::tensor::Tensor;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut s = Stream::new(seed, "loss");
        Image::from_fn(h, w, |_, _| s.uniform(0.0, 1.0) as f32)
    }

    #[test]
    fn ssim_self_is_one() {
        let x = rand_image(16, 16, 1);
        assert_eq!(ssim(&x, &x, &SSIMParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = rand_image(12, 12, 2);
        let b = rand_image(12, 12, 3);
        let p = SSIMParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() < 1e-7, "{ab} vs {ba}");
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        // zero-variance patches: map = (2*0.12 + C1) / (0.04 + 0.36 + C1)
        let a = Image::full(16, 16, 0.2);
        let b = Image::full(16, 16, 0.6);
        let got = ssim(&a, &b, &SSIMParams::default()).unwrap();
        let want = (2.0 * 0.2 * 0.6 + 1e-4) / (0.2f64 * 0.2 + 0.6 * 0.6 + 1e-4);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    /// Independent scalar-loop SSIM oracle (f64, replicate boundary).
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (h, w) = (a.height(), a.width());
        let size = 11usize;
        let sigma = 1.5f64;
        let c = (size / 2) as f64;
        let mut win = vec![0f64; size * size];
        let mut sum = 0.0;
        for i in 0..size {
            for j in 0..size {
                let v = (-(((i as f64 - c).powi(2) + (j as f64 - c).powi(2)))
                    / (2.0 * sigma * sigma))
                    .exp();
                win[i * size + j] = v;
                sum += v;
            }
        }
        for v in &mut win {
            *v /= sum;
        }
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let (c1, c2) = (1e-4f64, 9e-4f64);
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..size {
                    for v in 0..size {
                        let si = clamp(i as isize + u as isize - 5, h);
                        let sj = clamp(j as isize + v as isize - 5, w);
                        let av = a.get(si, sj) as f64;
                        let bv = b.get(si, sj) as f64;
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

    #[test]
    fn ssim_matches_scalar_loop_oracle() {
        let x = rand_image(10, 10, 4);
        let shifted = x.map(|v| (v + 0.5).min(1.0));
        let got = ssim(&x, &shifted, &SSIMParams::default()).unwrap();
        let want = ssim_oracle(&x, &shifted);
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn ssim_shape_mismatch_errors() {
        let a = Image::zeros(4, 4);
        let b = Image::zeros(4, 5);
        assert!(matches!(
            ssim(&a, &b, &SSIMParams::default()),
            Err(CiderError::Shape { .. })
        ));
    }

    #[test]
    fn graph_ssim_matches_plain_ssim() {
        let a = rand_image(9, 9, 5);
        let b = rand_image(9, 9, 6);
        let p = SSIMParams::default();
        let mut g = Graph::new();
        let na = g.constant(a.tensor().clone());
        let nb = g.constant(b.tensor().clone());
        let s = ssim_node(&mut g, na, nb, &p).unwrap();
        let plain = ssim(&a, &b, &p).unwrap();
        assert!((g.scalar_value(s) - plain).abs() < 1e-6);
    }

    #[test]
    fn loss_ssim_is_zero_at_exact_reblur() {
        let x = rand_image(12, 12, 7);
        let k = Kernel::gaussian(5, 1.2);
        let y = Image::new(
            tensor::conv2d_same(x.tensor(), &k, BoundaryMode::Replicate).unwrap(),
        )
        .unwrap();
        let mut g = Graph::new();
        let nx = g.constant(x.tensor().clone());
        let ny = g.constant(y.tensor().clone());
        let l = loss_ssim(&mut g, nx, &k, ny, &SSIMParams::default()).unwrap();
        assert!(g.scalar_value(l).abs() < 1e-7);
    }

    #[test]
    fn loss_ssim_gradient_matches_finite_differences() {
        // FD side evaluated by the f64 reference implementation; the f32
        // self-evaluation cannot resolve near-zero SSIM gradient components
        let truth = test_chart(12, 12);
        let k = Kernel::gaussian(3, 0.8);
        let y = Image::new(
            tensor::conv2d_same(truth.tensor(), &k, BoundaryMode::Replicate).unwrap(),
        )
        .unwrap();
        let x0 = rand_image(12, 12, 8);
        let mut params = ParamSet::new();
        params.insert("x", x0.tensor().clone());
        let p = SSIMParams::default();
        let mut g = Graph::new();
        let nx = g.param("x", x0.tensor().clone());
        let ny = g.constant(y.tensor().clone());
        let l = loss_ssim(&mut g, nx, &k, ny, &p).unwrap();
        g.backward(l).unwrap();
        let report = crate::reference::compare_grads_to_fd(
            &params,
            |name| g.param_grad(name).unwrap().clone(),
            |ps| {
                let gx = crate::reference::Grid::from_tensor(ps.get("x").unwrap());
                let gy = crate::reference::Grid::from_tensor(y.tensor());
                let reblur = crate::reference::conv_fixed(&gx, k.filter());
                1.0 - crate::reference::ssim(&reblur, &gy)
            },
        );
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
    }

    #[test]
    fn loss_increases_with_noise_level() {
        let truth = test_chart(24, 24);
        let k = Kernel::gaussian(5, 1.2);
        let y = Image::new(
            tensor::conv2d_same(truth.tensor(), &k, BoundaryMode::Replicate).unwrap(),
        )
        .unwrap();
        let p = SSIMParams::default();
        let mut noise_stream = Stream::new(99, "monotone");
        let noise: Vec<f32> = (0..truth.data().len())
            .map(|_| noise_stream.normal() as f32)
            .collect();
        let mut prev = -1.0f64;
        for sigma in [0.0, 0.02, 0.05, 0.1, 0.2] {
            let x = Image::from_vec(
                24,
                24,
                truth
                    .data()
                    .iter()
                    .zip(&noise)
                    .map(|(&v, &n)| (v + sigma * n).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap();
            let mut g = Graph::new();
            let nx = g.constant(x.tensor().clone());
            let ny = g.constant(y.tensor().clone());
            let l = loss_ssim(&mut g, nx, &k, ny, &p).unwrap();
            let val = g.scalar_value(l);
            assert!(val > prev, "sigma {sigma}: {val} <= {prev}");
            prev = val;
        }
    }

    #[test]
    fn hessian_vanishes_on_constant_and_affine() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(1, 6, 6, 0.42));
        let h = hessian_reg(&mut g, c);
        assert_eq!(g.scalar_value(h), 0.0);

        // representable affine ramp: exact zero
        let ramp = Tensor::from_fn(1, 6, 6, |_, i, j| 0.25 * i as f32 + 0.5 * j as f32 + 1.0);
        let mut g = Graph::new();
        let r = g.constant(ramp);
        let h = hessian_reg(&mut g, r);
        assert_eq!(g.scalar_value(h), 0.0);
    }

    #[test]
    fn hessian_of_quadratic_is_thirty_on_5x5() {
        // one axis quadratic: 15 interior stencils of |2| each
        let z = Tensor::from_fn(1, 5, 5, |_, i, _| (i * i) as f32);
        let mut g = Graph::new();
        let n = g.constant(z);
        let h = hessian_reg(&mut g, n);
        assert_eq!(g.scalar_value(h), 30.0);
    }

    #[test]
    fn hessian_is_translation_invariant() {
        let mut s = Stream::new(10, "ht");
        let z = Tensor::from_fn(1, 6, 6, |_, _, _| (s.next_u64() % 64) as f32 / 64.0);
        let shifted = z.map(|v| v + 0.25);
        let mut g = Graph::new();
        let a = g.constant(z);
        let b = g.constant(shifted);
        let ha = g.hessian_l1(a);
        let hb = g.hessian_l1(b);
        assert_eq!(g.scalar_value(ha), g.scalar_value(hb));
    }

    #[test]
    fn sparsity_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(1, 4, 4));
        let s = sparsity_l1(&mut g, z);
        assert_eq!(g.scalar_value(s), 0.0);

        let half = g.constant(Tensor::full(1, 4, 4, 0.5));
        let s = sparsity_l1(&mut g, half);
        assert_eq!(g.scalar_value(s), 8.0);

        let x = rand_image(6, 6, 11);
        let n = g.constant(x.tensor().clone());
        let s = sparsity_l1(&mut g, n);
        let want: f64 = x.data().iter().map(|&v| v.abs() as f64).sum();
        assert!((g.scalar_value(s) - want).abs() < 1e-5);
    }

    #[test]
    fn total_loss_zero_weights_and_microscopy_independence() {
        let x = rand_image(10, 10, 12);
        let k = Kernel::boxcar(3);
        let y = rand_image(10, 10, 13);
        let p = SSIMParams::default();

        let zero = LossWeights {
            alpha: 0.0,
            lambda: 0.0,
            beta: 0.0,
        };
        let mut g = Graph::new();
        let nx = g.constant(x.tensor().clone());
        let ny = g.constant(y.tensor().clone());
        let l = total_loss(&mut g, nx, &k, ny, &zero, true, &p).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);

        // with microscopy off, beta must not matter
        let eval = |beta: f64| {
            let w = LossWeights {
                alpha: 1.0,
                lambda: 0.01,
                beta,
            };
            let mut g = Graph::new();
            let nx = g.constant(x.tensor().clone());
            let ny = g.constant(y.tensor().clone());
            let l = total_loss(&mut g, nx, &k, ny, &w, false, &p).unwrap();
            g.scalar_value(l)
        };
        assert_eq!(eval(0.0), eval(123.0));
    }

    #[test]
    fn total_loss_combines_component_oracles() {
        let x = rand_image(10, 10, 14);
        let k = Kernel::gaussian(3, 0.9);
        let y = rand_image(10, 10, 15);
        let p = SSIMParams::default();
        let w = LossWeights {
            alpha: 1.0,
            lambda: 0.01,
            beta: 0.0,
        };
        let mut g = Graph::new();
        let nx = g.constant(x.tensor().clone());
        let ny = g.constant(y.tensor().clone());
        let total = total_loss(&mut g, nx, &k, ny, &w, false, &p).unwrap();
        let data = loss_ssim(&mut g, nx, &k, ny, &p).unwrap();
        let reg = hessian_reg(&mut g, nx);
        let want = 1.0 * g.scalar_value(data) + 0.01 * g.scalar_value(reg);
        assert!((g.scalar_value(total) - want).abs() < 1e-5);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let truth = test_chart(10, 10);
        let k = Kernel::gaussian(3, 0.8);
        let y = Image::new(
            tensor::conv2d_same(truth.tensor(), &k, BoundaryMode::Replicate).unwrap(),
        )
        .unwrap();
        // quantized start point keeps Hessian subgradients off their kinks
        let mut s = Stream::new(16, "tl");
        let x0 = Tensor::from_fn(1, 10, 10, |_, _, _| (s.next_u64() % 33) as f32 / 32.0);
        let mut params = ParamSet::new();
        params.insert("x", x0.clone());
        let p = SSIMParams::default();
        let w = LossWeights::default();
        let mut g = Graph::new();
        let nx = g.param("x", x0);
        let ny = g.constant(y.tensor().clone());
        let l = total_loss(&mut g, nx, &k, ny, &w, true, &p).unwrap();
        g.backward(l).unwrap();
        let report = crate::reference::compare_grads_to_fd(
            &params,
            |name| g.param_grad(name).unwrap().clone(),
            |ps| {
                let gx = crate::reference::Grid::from_tensor(ps.get("x").unwrap());
                let gy = crate::reference::Grid::from_tensor(y.tensor());
                crate::reference::total_loss(&gx, &k, &gy, w.alpha, w.lambda, w.beta)
            },
        );
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
    }

    #[test]
    fn psnr_values() {
        let x = rand_image(8, 8, 17);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);

        let a = Image::zeros(10, 10);
        let b = Image::full(10, 10, 0.1);
        let got = psnr(&a, &b).unwrap();
        assert!((got - 20.0).abs() < 1e-6, "{got}");

        let c = rand_image(9, 9, 18);
        let d = rand_image(9, 9, 19);
        let mse: f64 = c
            .data()
            .iter()
            .zip(d.data())
            .map(|(&x, &y)| {
                let e = x as f64 - y as f64;
                e * e
            })
            .sum::<f64>()
            / 81.0;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&c, &d).unwrap() - want).abs() < 1e-6);
    }
}
