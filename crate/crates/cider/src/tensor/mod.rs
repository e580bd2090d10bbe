//! Dense tensor storage and the image/kernel value types.
//!
//! A [`Tensor`] is a rank-3 array `[channels, height, width]` of `f32`,
//! row-major within a channel and channel-major overall. Convolution inner
//! loops accumulate in `f64` to bound rounding error; values are expected to
//! stay finite after every public operation.

mod conv;
mod kernel;
mod resample;

pub use conv::{conv2d_same, correlate2d_same};
pub use kernel::{Filter2d, Kernel};
pub use resample::{resample, ResampleFactor, ResampleMethod};

pub(crate) use conv::{
    conv_mc, conv_mc_grad_bias, conv_mc_grad_input, conv_mc_grad_weight, filter_conv_channels,
    filter_conv_channels_adjoint, pad, pad_adjoint,
};

use crate::error::{CiderError, Result};
use serde::{Deserialize, Serialize};

/// Boundary extension used when a filter support leaves the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Clamp to the edge sample (default).
    #[default]
    Replicate,
    /// Whole-sample mirror: index -1 maps to 1.
    Reflect,
    /// Wrap around.
    Circular,
}

impl BoundaryMode {
    /// Map a possibly out-of-range index into [0, n).
    #[inline]
    pub fn map(self, idx: isize, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as isize;
        match self {
            BoundaryMode::Replicate => idx.clamp(0, n - 1) as usize,
            BoundaryMode::Reflect => {
                if n == 1 {
                    return 0;
                }
                let period = 2 * (n - 1);
                let mut i = idx.rem_euclid(period);
                if i >= n {
                    i = period - i;
                }
                i as usize
            }
            BoundaryMode::Circular => idx.rem_euclid(n) as usize,
        }
    }
}

/// Dense `[channels, height, width]` array of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn full(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Build from raw data; validates length and finiteness.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(CiderError::shape(
                "Tensor::from_vec",
                (channels, height, width),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CiderError::Input(
                "tensor data contains NaN or infinite values".into(),
            ));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(CiderError::shape("zip_map", self.shape(), other.shape()));
        }
        Ok(Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extract one channel as a new single-channel tensor.
    pub fn extract_channel(&self, c: usize) -> Tensor {
        Tensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    /// Stack single-channel tensors of equal spatial dims.
    pub fn stack_channels(parts: &[Tensor]) -> Result<Tensor> {
        let (h, w) = (parts[0].height, parts[0].width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        for p in parts {
            if (p.height, p.width) != (h, w) {
                return Err(CiderError::shape("stack_channels", (h, w), (p.height, p.width)));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            channels: parts.iter().map(|p| p.channels).sum(),
            height: h,
            width: w,
            data,
        })
    }

    /// Replicate-pad the bottom/right edges so H and W become multiples of `divisor`.
    pub fn pad_to_multiple(&self, divisor: usize) -> Tensor {
        let nh = self.height.div_ceil(divisor) * divisor;
        let nw = self.width.div_ceil(divisor) * divisor;
        if nh == self.height && nw == self.width {
            return self.clone();
        }
        Tensor::from_fn(self.channels, nh, nw, |c, i, j| {
            self.get(c, i.min(self.height - 1), j.min(self.width - 1))
        })
    }

    /// Top-left crop to `h` x `w`.
    pub fn crop(&self, h: usize, w: usize) -> Tensor {
        assert!(h <= self.height && w <= self.width);
        Tensor::from_fn(self.channels, h, w, |c, i, j| self.get(c, i, j))
    }
}

/// Single-channel image, nominal range [0, 1]; clamping happens only at I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.channels() != 1 {
            return Err(CiderError::Input(format!(
                "image must have exactly 1 channel, got {}",
                t.channels()
            )));
        }
        Ok(Image(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image(Tensor::zeros(1, height, width))
    }

    pub fn full(height: usize, width: usize, value: f32) -> Self {
        Image(Tensor::full(1, height, width, value))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        Image(Tensor::from_fn(1, height, width, |_, i, j| f(i, j)))
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Ok(Image(Tensor::from_vec(1, height, width, data)?))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.0.get(0, i, j)
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.0.set(0, i, j, v)
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        self.0.data()
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }
    #[inline]
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image(self.0.map(f))
    }

    /// Clamp to [0, 1]; used at I/O boundaries only.
    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}
