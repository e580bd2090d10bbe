//! Multi-filter feature extraction.
//!
//! The engine always produces exactly [`FEATURE_CHANNELS`] = 16 feature maps
//! of its input. Two banks are available: a fixed analytic set (identity,
//! Gaussians, derivative stencils, oriented edge filters — the default,
//! fully reproducible from the formulas below) and a loadable learned bank
//! (one convolution plus three residual blocks read from a CIDRW001 file).

use crate::error::{CiderError, Result};
use crate::tensor::{self, BoundaryMode, Filter2d, Image, Tensor};
use crate::weights::WeightsFile;
use std::path::Path;

pub const FEATURE_CHANNELS: usize = 16;

/// Lower bound of the positified range.
pub const POSITIFY_EPS: f32 = 1e-3;

/// 16 feature maps with the spatial dims of the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack(Tensor);

impl FeatureStack {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.channels() != FEATURE_CHANNELS {
            return Err(CiderError::shape(
                "FeatureStack::new",
                (FEATURE_CHANNELS, "any", "any"),
                t.shape(),
            ));
        }
        Ok(FeatureStack(t))
    }

    #[inline]
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor {
        self.0
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }
    pub fn channel(&self, c: usize) -> &[f32] {
        self.0.channel(c)
    }
}

/// Learned extractor weights: one conv layer plus three residual blocks.
#[derive(Debug, Clone)]
pub struct LoadedBank {
    pub conv0_weight: Vec<f32>,
    pub conv0_bias: Vec<f32>,
    pub conv0_kernel: usize,
    /// Per residual block: (w1, b1, w2, b2), each conv 16 -> 16, 3x3.
    pub blocks: Vec<(Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>)>,
}

/// Filter bank in one of its two modes.
#[derive(Debug, Clone)]
pub enum FilterBank {
    Analytic(Vec<Filter2d>),
    Loaded(LoadedBank),
}

impl FilterBank {
    pub fn mode_name(&self) -> &'static str {
        match self {
            FilterBank::Analytic(_) => "analytic",
            FilterBank::Loaded(_) => "loaded",
        }
    }
}

fn gaussian_taps(size: usize, sigma: f64) -> Filter2d {
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
    Filter2d::new(size, size, taps.iter().map(|&v| (v / sum) as f32).collect()).unwrap()
}

/// Difference of two offset Gaussians along direction `angle`; positive and
/// negative lobes normalized to +1 / -1 so the filter has zero mean.
fn oriented_edge_taps(size: usize, sigma: f64, offset: f64, angle: f64) -> Filter2d {
    let c = (size / 2) as f64;
    let (dy, dx) = angle.sin_cos();
    let mut raw = Vec::with_capacity(size * size);
    let (mut pos, mut neg) = (0.0f64, 0.0f64);
    for i in 0..size {
        for j in 0..size {
            let pi = i as f64 - c;
            let pj = j as f64 - c;
            let g = |oy: f64, ox: f64| {
                let di = pi - oy;
                let dj = pj - ox;
                (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
            };
            let v = g(offset * dy, offset * dx) - g(-offset * dy, -offset * dx);
            if v > 0.0 {
                pos += v;
            } else {
                neg -= v;
            }
            raw.push(v);
        }
    }
    let taps = raw
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (v / pos) as f32
            } else {
                (v / neg) as f32
            }
        })
        .collect();
    Filter2d::new(size, size, taps).unwrap()
}

/// The fixed 16-filter analytic bank.
///
/// 0: identity; 1-2: Gaussian sigma 1 and 2; 3-4: first differences along
/// x and y; 5-7: second differences xx, yy, xy; 8: Laplacian; 9-15: oriented
/// edge filters (difference of offset Gaussians) at angles m*pi/7.
pub fn analytic_bank() -> FilterBank {
    let mut filters = Vec::with_capacity(FEATURE_CHANNELS);
    filters.push(Filter2d::new(1, 1, vec![1.0]).unwrap());
    filters.push(gaussian_taps(7, 1.0));
    filters.push(gaussian_taps(13, 2.0));
    filters.push(Filter2d::new(1, 3, vec![-0.5, 0.0, 0.5]).unwrap());
    filters.push(Filter2d::new(3, 1, vec![-0.5, 0.0, 0.5]).unwrap());
    filters.push(Filter2d::new(1, 3, vec![1.0, -2.0, 1.0]).unwrap());
    filters.push(Filter2d::new(3, 1, vec![1.0, -2.0, 1.0]).unwrap());
    filters.push(
        Filter2d::new(
            3,
            3,
            vec![0.25, 0.0, -0.25, 0.0, 0.0, 0.0, -0.25, 0.0, 0.25],
        )
        .unwrap(),
    );
    filters.push(
        Filter2d::new(3, 3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).unwrap(),
    );
    for m in 0..7 {
        let angle = m as f64 * std::f64::consts::PI / 7.0;
        filters.push(oriented_edge_taps(7, 1.0, 1.2, angle));
    }
    debug_assert_eq!(filters.len(), FEATURE_CHANNELS);
    FilterBank::Analytic(filters)
}

fn expect_entry<'a>(
    w: &'a WeightsFile,
    name: &str,
    dims: &[u32],
) -> Result<&'a crate::weights::Entry> {
    let entry = w
        .get(name)
        .ok_or_else(|| CiderError::Architecture(format!("missing layer '{name}'")))?;
    if entry.dims != dims {
        return Err(CiderError::Architecture(format!(
            "layer '{name}' has dims {:?}, expected {:?} (16-channel extractor: 1 conv + 3 residual blocks)",
            entry.dims, dims
        )));
    }
    Ok(entry)
}

/// Load a learned bank, validating the declared architecture
/// (conv0 producing 16 channels, then three 16-to-16 residual blocks).
pub fn load_weights(path: impl AsRef<Path>) -> Result<FilterBank> {
    let w = WeightsFile::load(path)?;
    let conv0 = w
        .get("conv0.weight")
        .ok_or_else(|| CiderError::Architecture("missing layer 'conv0.weight'".into()))?;
    if conv0.dims.len() != 4 || conv0.dims[1] != 1 || conv0.dims[2] != conv0.dims[3] {
        return Err(CiderError::Architecture(format!(
            "conv0.weight has dims {:?}, expected [16, 1, k, k]",
            conv0.dims
        )));
    }
    if conv0.dims[0] as usize != FEATURE_CHANNELS {
        return Err(CiderError::Architecture(format!(
            "conv0.weight produces {} channels, expected {FEATURE_CHANNELS}",
            conv0.dims[0]
        )));
    }
    let k = conv0.dims[2] as usize;
    if k % 2 == 0 {
        return Err(CiderError::Architecture(format!(
            "conv0 kernel size {k} must be odd"
        )));
    }
    let conv0_weight = conv0.data.clone();
    let conv0_bias = expect_entry(&w, "conv0.bias", &[16])?.data.clone();
    let mut blocks = Vec::with_capacity(3);
    for b in 1..=3 {
        let w1 = expect_entry(&w, &format!("res{b}.conv1.weight"), &[16, 16, 3, 3])?
            .data
            .clone();
        let b1 = expect_entry(&w, &format!("res{b}.conv1.bias"), &[16])?.data.clone();
        let w2 = expect_entry(&w, &format!("res{b}.conv2.weight"), &[16, 16, 3, 3])?
            .data
            .clone();
        let b2 = expect_entry(&w, &format!("res{b}.conv2.bias"), &[16])?.data.clone();
        blocks.push((w1, b1, w2, b2));
    }
    Ok(FilterBank::Loaded(LoadedBank {
        conv0_weight,
        conv0_bias,
        conv0_kernel: k,
        blocks,
    }))
}

/// Extract the 16 feature maps of `y`.
pub fn extract_features(y: &Image, bank: &FilterBank) -> Result<FeatureStack> {
    match bank {
        FilterBank::Analytic(filters) => {
            let maps: Vec<Tensor> = filters
                .iter()
                .map(|f| tensor::filter_conv_channels(y.tensor(), f, BoundaryMode::Replicate, false))
                .collect();
            FeatureStack::new(Tensor::stack_channels(&maps)?)
        }
        FilterBank::Loaded(bank) => {
            let mut x = tensor::conv_mc(
                y.tensor(),
                &bank.conv0_weight,
                Some(&bank.conv0_bias),
                FEATURE_CHANNELS,
                bank.conv0_kernel,
                bank.conv0_kernel,
                1,
                BoundaryMode::Replicate,
            );
            for (w1, b1, w2, b2) in &bank.blocks {
                let t = tensor::conv_mc(
                    &x,
                    w1,
                    Some(b1),
                    FEATURE_CHANNELS,
                    3,
                    3,
                    1,
                    BoundaryMode::Replicate,
                )
                .map(|v| v.max(0.0));
                let r = tensor::conv_mc(
                    &t,
                    w2,
                    Some(b2),
                    FEATURE_CHANNELS,
                    3,
                    3,
                    1,
                    BoundaryMode::Replicate,
                );
                x = x.zip_map(&r, |a, b| a + b)?;
            }
            FeatureStack::new(x)
        }
    }
}

/// Per-channel affine record mapping a feature map into [eps, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMap {
    Affine { scale: f32, offset: f32 },
    Constant(f32),
}

/// Records how each channel was normalized; inverts exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalization {
    pub channels: Vec<ChannelMap>,
}

/// Map each channel affinely into [eps, 1] using its own min/max.
/// Constant channels map to 0.5 and are restored exactly on inversion.
pub fn positify(stack: &FeatureStack) -> (FeatureStack, FeatureNormalization) {
    let t = stack.tensor();
    let (c, h, w) = t.shape();
    let mut out = Tensor::zeros(c, h, w);
    let mut channels = Vec::with_capacity(c);
    for ch in 0..c {
        let src = t.channel(ch);
        let lo = src.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if (hi - lo) as f64 <= 1e-12 {
            out.channel_mut(ch).fill(0.5);
            channels.push(ChannelMap::Constant(lo));
        } else {
            let scale = ((1.0 - POSITIFY_EPS as f64) / (hi - lo) as f64) as f32;
            let offset = POSITIFY_EPS - scale * lo;
            let dst = out.channel_mut(ch);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = scale * s + offset;
            }
            channels.push(ChannelMap::Affine { scale, offset });
        }
    }
    (
        FeatureStack(out),
        FeatureNormalization { channels },
    )
}

/// Exact inverse of [`positify`].
pub fn depositify(stack: &FeatureStack, norm: &FeatureNormalization) -> FeatureStack {
    let t = stack.tensor();
    let (c, h, w) = t.shape();
    debug_assert_eq!(c, norm.channels.len());
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = out.channel_mut(ch);
        match norm.channels[ch] {
            ChannelMap::Constant(v) => dst.fill(v),
            ChannelMap::Affine { scale, offset } => {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - offset) / scale;
                }
            }
        }
    }
    FeatureStack(out)
}
