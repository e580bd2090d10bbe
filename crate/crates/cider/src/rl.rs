//! Richardson-Lucy deconvolution, in image space and per feature channel.
//!
//! The multiplicative update is
//! `x <- x .* correlate(y / max(conv(x, k), floor), k)`.
//! Flooring the denominator (rather than adding an epsilon) preserves exact
//! fixed points: if `conv(x, k) == y` the update leaves `x` unchanged.

use crate::error::{CiderError, Result};
use crate::features::{depositify, positify, FeatureStack};
use crate::tensor::{conv2d_same, correlate2d_same, BoundaryMode, Image, Kernel, Tensor};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RLInit {
    /// Start from the observed image (default).
    Observed,
    Constant(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RLConfig {
    pub iterations: usize,
    pub denom_floor: f32,
    pub init: RLInit,
    pub boundary: BoundaryMode,
}

impl RLConfig {
    /// Image-space baseline defaults.
    pub fn image_default() -> Self {
        RLConfig {
            iterations: 50,
            denom_floor: 1e-12,
            init: RLInit::Observed,
            boundary: BoundaryMode::Replicate,
        }
    }

    /// Feature-space defaults (fewer iterations before generator synthesis).
    pub fn feature_default() -> Self {
        RLConfig {
            iterations: 30,
            ..Self::image_default()
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CiderError::Config("RL iterations must be >= 1".into()));
        }
        if self.denom_floor <= 0.0 {
            return Err(CiderError::Config("RL denominator floor must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for RLConfig {
    fn default() -> Self {
        Self::image_default()
    }
}

fn rl_tensor(y: &Tensor, k: &Kernel, cfg: &RLConfig) -> Result<Tensor> {
    let mut x = match cfg.init {
        RLInit::Observed => y.clone(),
        RLInit::Constant(c) => Tensor::full(y.channels(), y.height(), y.width(), c),
    };
    for _ in 0..cfg.iterations {
        let denom = conv2d_same(&x, k, cfg.boundary)?;
        let ratio = y.zip_map(&denom, |yy, d| yy / d.max(cfg.denom_floor))?;
        let corr = correlate2d_same(&ratio, k, cfg.boundary)?;
        x = x.zip_map(&corr, |a, b| a * b)?;
    }
    Ok(x)
}

/// Classic image-space Richardson-Lucy.
pub fn rl_image(y: &Image, k: &Kernel, cfg: &RLConfig) -> Result<Image> {
    cfg.validate()?;
    if y.data().iter().any(|&v| v < 0.0) {
        return Err(CiderError::Input(
            "Richardson-Lucy requires non-negative input intensities".into(),
        ));
    }
    Image::new(rl_tensor(y.tensor(), k, cfg)?)
}

/// Feature-space Richardson-Lucy: each channel is independently mapped into
/// [eps, 1], run through the image-space update, and mapped back.
pub fn rl_features(stack: &FeatureStack, k: &Kernel, cfg: &RLConfig) -> Result<FeatureStack> {
    cfg.validate()?;
    let (pos, norm) = positify(stack);
    let t = pos.tensor();
    let results: Vec<Result<Tensor>> = (0..t.channels())
        .into_par_iter()
        .map(|ch| rl_tensor(&t.extract_channel(ch), k, cfg))
        .collect();
    let mut channels = Vec::with_capacity(t.channels());
    for r in results {
        channels.push(r?);
    }
    let deconvolved = FeatureStack::new(Tensor::stack_channels(&channels)?)?;
    Ok(depositify(&deconvolved, &norm))
}
