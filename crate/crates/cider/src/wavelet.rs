//! 2D Daubechies-6 wavelet transform and iterative background estimation.
//!
//! The transform is separable and expansive: each level keeps
//! `floor((n + 11) / 2)` coefficients per axis (halving plus boundary
//! padding), computed under half-sample symmetric extension. Keeping the
//! extra boundary coefficients makes `idwt2(dwt2(x))` reproduce `x` to
//! floating-point accuracy at every level count.
//!
//! Background estimation zeroes everything brighter than the image mean,
//! then repeatedly (default 3 times) keeps only the coarsest wavelet band,
//! reconstructs it, and caps the result with `sqrt(y)/2` pointwise; the
//! final residual is the background.

use crate::error::{CiderError, Result};
use crate::instrument;
use crate::tensor::{Image, Tensor};

/// Daubechies-6 scaling filter (12 taps, 6 vanishing moments), natural order.
pub const DB6_SCALING: [f64; 12] = [
    0.11154074335008017,
    0.4946238903983854,
    0.7511339080215775,
    0.3152503517092432,
    -0.22626469396516913,
    -0.12976686756709563,
    0.09750160558707936,
    0.02752286553001629,
    -0.031582039318031156,
    0.0005538422009938016,
    0.004777257511010651,
    -0.00107730108499558,
];

const L: usize = 12;

/// Alternate-flip quadrature mirror: g[m] = (-1)^m h[L-1-m].
fn db6_wavelet() -> [f64; 12] {
    let mut g = [0.0; 12];
    for (m, gm) in g.iter_mut().enumerate() {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        *gm = sign * DB6_SCALING[L - 1 - m];
    }
    g
}

/// Half-sample symmetric lookup with multiple bounces for short signals.
#[inline]
fn sym(x: &[f32], idx: isize) -> f64 {
    let n = x.len() as isize;
    if n == 1 {
        return x[0] as f64;
    }
    let period = 2 * n;
    let mut i = idx.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    x[i as usize] as f64
}

fn band_len(n: usize) -> usize {
    (n + L - 1) / 2
}

/// One level of the 1D analysis: returns (approximation, detail).
fn dwt1d(x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let g = db6_wavelet();
    let len = band_len(x.len());
    let mut ca = Vec::with_capacity(len);
    let mut cd = Vec::with_capacity(len);
    for i in 0..len as isize {
        // correlation start in signal coordinates
        let s = 2 * i + 2 - L as isize;
        let mut a = 0f64;
        let mut d = 0f64;
        for (m, (&h, &gg)) in DB6_SCALING.iter().zip(&g).enumerate() {
            let v = sym(x, s + m as isize);
            a += h * v;
            d += gg * v;
        }
        ca.push(a as f32);
        cd.push(d as f32);
    }
    (ca, cd)
}

/// One level of the 1D synthesis back to `n` samples.
fn idwt1d(ca: &[f32], cd: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(ca.len(), cd.len());
    let g = db6_wavelet();
    let len = ca.len() as isize;
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        // taps m = t + L - 2 - 2i must lie in [0, L)
        let i_lo = (t.div_euclid(2)).max(0);
        let i_hi = ((t + L as isize - 2).div_euclid(2)).min(len - 1);
        let mut acc = 0f64;
        for i in i_lo..=i_hi {
            let m = (t + L as isize - 2 - 2 * i) as usize;
            acc += ca[i as usize] as f64 * DB6_SCALING[m] + cd[i as usize] as f64 * g[m];
        }
        out.push(acc as f32);
    }
    out
}

fn transpose(data: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = data[i * w + j];
        }
    }
    out
}

/// Apply `dwt1d` to every row of an `h` x `w` grid.
fn dwt_rows(data: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>, usize) {
    let bw = band_len(w);
    let mut a = vec![0f32; h * bw];
    let mut d = vec![0f32; h * bw];
    for i in 0..h {
        let (ra, rd) = dwt1d(&data[i * w..(i + 1) * w]);
        a[i * bw..(i + 1) * bw].copy_from_slice(&ra);
        d[i * bw..(i + 1) * bw].copy_from_slice(&rd);
    }
    (a, d, bw)
}

fn idwt_rows(a: &[f32], d: &[f32], h: usize, bw: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; h * w];
    for i in 0..h {
        let row = idwt1d(&a[i * bw..(i + 1) * bw], &d[i * bw..(i + 1) * bw], w);
        out[i * w..(i + 1) * w].copy_from_slice(&row);
    }
    out
}

/// Detail bands of one pyramid level plus the shape the level was built from.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    /// rows low-pass, columns high-pass
    pub lh: Tensor,
    /// rows high-pass, columns low-pass
    pub hl: Tensor,
    /// both high-pass
    pub hh: Tensor,
    pub pre_height: usize,
    pub pre_width: usize,
}

/// Multi-level separable decomposition; `levels[0]` is the finest.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub levels: Vec<PyramidLevel>,
    /// Coarsest approximation band.
    pub approx: Tensor,
}

impl WaveletPyramid {
    pub fn zero_details(&mut self) {
        for level in &mut self.levels {
            level.lh.data_mut().fill(0.0);
            level.hl.data_mut().fill(0.0);
            level.hh.data_mut().fill(0.0);
        }
    }
}

/// Decompose an image `levels` deep.
pub fn dwt2(img: &Image, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(CiderError::Config("wavelet levels must be >= 1".into()));
    }
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(CiderError::Config(format!(
            "image {h}x{w} is too small to decompose; max feasible levels: 0"
        )));
    }
    let mut cur = img.data().to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut out_levels = Vec::with_capacity(levels);
    for _ in 0..levels {
        // rows, then columns via transpose
        let (ra, rd, bw) = dwt_rows(&cur, ch, cw);
        let ra_t = transpose(&ra, ch, bw);
        let rd_t = transpose(&rd, ch, bw);
        let (ll_t, lh_t, bh) = dwt_rows(&ra_t, bw, ch);
        let (hl_t, hh_t, _) = dwt_rows(&rd_t, bw, ch);
        let ll = transpose(&ll_t, bw, bh);
        let lh = transpose(&lh_t, bw, bh);
        let hl = transpose(&hl_t, bw, bh);
        let hh = transpose(&hh_t, bw, bh);
        out_levels.push(PyramidLevel {
            lh: Tensor::from_vec(1, bh, bw, lh)?,
            hl: Tensor::from_vec(1, bh, bw, hl)?,
            hh: Tensor::from_vec(1, bh, bw, hh)?,
            pre_height: ch,
            pre_width: cw,
        });
        cur = ll;
        ch = bh;
        cw = bw;
    }
    Ok(WaveletPyramid {
        levels: out_levels,
        approx: Tensor::from_vec(1, ch, cw, cur)?,
    })
}

/// Reconstruct the image from a pyramid.
pub fn idwt2(pyr: &WaveletPyramid) -> Result<Image> {
    let mut cur = pyr.approx.data().to_vec();
    let (mut ch, mut cw) = (pyr.approx.height(), pyr.approx.width());
    for level in pyr.levels.iter().rev() {
        let (bh, bw) = (level.lh.height(), level.lh.width());
        if (bh, bw) != (ch, cw) {
            return Err(CiderError::Contract(format!(
                "pyramid band shape {bh}x{bw} does not match approximation {ch}x{cw}"
            )));
        }
        let (h, w) = (level.pre_height, level.pre_width);
        // invert columns first (on transposed grids), then rows
        let ll_t = transpose(&cur, bh, bw);
        let lh_t = transpose(level.lh.data(), bh, bw);
        let hl_t = transpose(level.hl.data(), bh, bw);
        let hh_t = transpose(level.hh.data(), bh, bw);
        let ra_t = idwt_rows(&ll_t, &lh_t, bw, bh, h);
        let rd_t = idwt_rows(&hl_t, &hh_t, bw, bh, h);
        let ra = transpose(&ra_t, bw, h);
        let rd = transpose(&rd_t, bw, h);
        cur = idwt_rows(&ra, &rd, h, bw, w);
        ch = h;
        cw = w;
    }
    Image::from_vec(ch, cw, cur)
}

/// Smooth background extracted from an image, plus the iteration count used.
#[derive(Debug, Clone)]
pub struct BackgroundEstimate {
    pub background: Image,
    pub iterations_used: usize,
}

/// Iterative coarse-band background estimation.
///
/// The residual starts as `y` with everything strictly above the mean zeroed.
/// Each iteration keeps only the coarsest of `levels` wavelet bands,
/// reconstructs it, and takes the pointwise minimum with `sqrt(y)/2` (the cap
/// is fixed from the original input). The final residual, clamped to be
/// non-negative, is the background.
pub fn estimate_background(y: &Image, iters: usize, levels: usize) -> Result<BackgroundEstimate> {
    instrument::count_background_removal();
    if y.data().iter().any(|&v| v < 0.0) {
        return Err(CiderError::Input(
            "background estimation requires non-negative pixels".into(),
        ));
    }
    let mean = y.tensor().mean() as f32;
    let mut residual = y.map(|v| if v > mean { 0.0 } else { v });
    let cap = y.map(|v| v.sqrt() * 0.5);
    for _ in 0..iters {
        let mut pyr = dwt2(&residual, levels)?;
        pyr.zero_details();
        let coarse = idwt2(&pyr)?;
        residual = Image::from_vec(
            y.height(),
            y.width(),
            coarse
                .data()
                .iter()
                .zip(cap.data())
                .map(|(&b, &c)| b.min(c))
                .collect(),
        )?;
    }
    Ok(BackgroundEstimate {
        background: residual.map(|v| v.max(0.0)),
        iterations_used: iters,
    })
}

/// Subtract the estimated background: `max(y - background, 0)`.
pub fn remove_background(y: &Image) -> Result<Image> {
    let est = estimate_background(y, 3, 7)?;
    Ok(Image::from_vec(
        y.height(),
        y.width(),
        y.data()
            .iter()
            .zip(est.background.data())
            .map(|(&a, &b)| (a - b).max(0.0))
            .collect(),
    )?)
}
