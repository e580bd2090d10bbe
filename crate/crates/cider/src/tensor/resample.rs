//! Factor-2 spatial resampling.

use super::Tensor;
use crate::error::{CiderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleFactor {
    Up2,
    Down2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

/// Resample every channel by a factor of two.
///
/// Nearest up then nearest down round-trips exactly. Bilinear up samples at
/// half-pixel centers (output pixel i reads source position (i + 0.5)/2 - 0.5,
/// clamped); bilinear down averages each 2x2 block.
pub fn resample(t: &Tensor, factor: ResampleFactor, method: ResampleMethod) -> Result<Tensor> {
    let (c, h, w) = t.shape();
    match factor {
        ResampleFactor::Up2 => {
            let (nh, nw) = (h * 2, w * 2);
            let out = match method {
                ResampleMethod::Nearest => {
                    Tensor::from_fn(c, nh, nw, |ch, i, j| t.get(ch, i / 2, j / 2))
                }
                ResampleMethod::Bilinear => Tensor::from_fn(c, nh, nw, |ch, i, j| {
                    let sample = |n: usize, idx: usize| -> (usize, usize, f32) {
                        let pos = (idx as f32 + 0.5) / 2.0 - 0.5;
                        let p0 = pos.floor();
                        let frac = pos - p0;
                        let a = (p0.max(0.0) as usize).min(n - 1);
                        let b = ((p0 + 1.0).max(0.0) as usize).min(n - 1);
                        (a, b, frac)
                    };
                    let (i0, i1, fi) = sample(h, i);
                    let (j0, j1, fj) = sample(w, j);
                    let v00 = t.get(ch, i0, j0);
                    let v01 = t.get(ch, i0, j1);
                    let v10 = t.get(ch, i1, j0);
                    let v11 = t.get(ch, i1, j1);
                    (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01) + fi * ((1.0 - fj) * v10 + fj * v11)
                }),
            };
            Ok(out)
        }
        ResampleFactor::Down2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(CiderError::shape("resample::down2", (c, h, w), "even dims"));
            }
            let (nh, nw) = (h / 2, w / 2);
            let out = match method {
                ResampleMethod::Nearest => {
                    Tensor::from_fn(c, nh, nw, |ch, i, j| t.get(ch, 2 * i, 2 * j))
                }
                ResampleMethod::Bilinear => Tensor::from_fn(c, nh, nw, |ch, i, j| {
                    0.25 * (t.get(ch, 2 * i, 2 * j)
                        + t.get(ch, 2 * i, 2 * j + 1)
                        + t.get(ch, 2 * i + 1, 2 * j)
                        + t.get(ch, 2 * i + 1, 2 * j + 1))
                }),
            };
            Ok(out)
        }
    }
}
