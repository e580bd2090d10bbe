//! Point-spread functions and general 2D filters.
//!
//! [`Kernel`] is the validated PSF type: odd dimensions, non-negative
//! weights, unit sum. [`Filter2d`] is an unconstrained 2D tap array used for
//! derivative and feature filters, which carry negative weights.
//!
//! Kernel text format (bit-exact contract): first line `H W` as ASCII
//! decimals, then H lines of W floats separated by single spaces. The loader
//! normalizes to unit sum and rejects negative weights or non-positive sums.

use crate::error::{CiderError, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Unconstrained 2D filter with odd dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter2d {
    height: usize,
    width: usize,
    taps: Vec<f32>,
}

impl Filter2d {
    pub fn new(height: usize, width: usize, taps: Vec<f32>) -> Result<Self> {
        if height % 2 == 0 || width % 2 == 0 {
            return Err(CiderError::Config(format!(
                "filter dimensions must be odd, got {height}x{width}"
            )));
        }
        if taps.len() != height * width {
            return Err(CiderError::shape("Filter2d::new", (height, width), taps.len()));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(CiderError::Input("filter taps contain NaN/Inf".into()));
        }
        Ok(Filter2d {
            height,
            width,
            taps,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut taps = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                taps.push(f(i, j));
            }
        }
        Filter2d::new(height, width, taps)
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
    pub fn taps(&self) -> &[f32] {
        &self.taps
    }
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.taps[u * self.width + v]
    }

    /// 180-degree rotation: tap (i, j) moves to (H-1-i, W-1-j).
    pub fn flipped(&self) -> Filter2d {
        let mut taps = self.taps.clone();
        taps.reverse();
        Filter2d {
            height: self.height,
            width: self.width,
            taps,
        }
    }
}

/// Blur kernel: odd dims, non-negative weights summing to 1 (within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    filter: Filter2d,
}

impl Kernel {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        let filter = Filter2d::new(height, width, weights)?;
        if filter.taps.iter().any(|&w| w < 0.0) {
            return Err(CiderError::Input("kernel weights must be non-negative".into()));
        }
        let sum: f64 = filter.taps.iter().map(|&w| w as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CiderError::Input(format!(
                "kernel weights must sum to 1, got {sum}"
            )));
        }
        Ok(Kernel { filter })
    }

    /// Build from raw non-negative weights, normalizing to unit sum.
    pub fn normalized(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        let filter = Filter2d::new(height, width, weights)?;
        if filter.taps.iter().any(|&w| w < 0.0) {
            return Err(CiderError::Input("kernel weights must be non-negative".into()));
        }
        let sum: f64 = filter.taps.iter().map(|&w| w as f64).sum();
        if sum <= 0.0 {
            return Err(CiderError::Input("kernel weight sum must be positive".into()));
        }
        let taps = filter.taps.iter().map(|&w| (w as f64 / sum) as f32).collect();
        Ok(Kernel {
            filter: Filter2d {
                height,
                width,
                taps,
            },
        })
    }

    /// 1x1 identity kernel (or an s x s kernel with 1 at the center).
    pub fn delta(size: usize) -> Kernel {
        assert!(size % 2 == 1);
        let mut w = vec![0.0; size * size];
        w[(size / 2) * size + size / 2] = 1.0;
        Kernel::new(size, size, w).unwrap()
    }

    /// Uniform box kernel.
    pub fn boxcar(size: usize) -> Kernel {
        assert!(size % 2 == 1);
        Kernel::normalized(size, size, vec![1.0; size * size]).unwrap()
    }

    /// Isotropic Gaussian sampled at pixel centers, normalized.
    pub fn gaussian(size: usize, sigma: f64) -> Kernel {
        assert!(size % 2 == 1 && sigma > 0.0);
        let c = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let di = i as f64 - c;
                let dj = j as f64 - c;
                w.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp() as f32);
            }
        }
        Kernel::normalized(size, size, w).unwrap()
    }

    /// Motion-like kernel: a line segment of `length` pixels at `angle`
    /// radians, blurred slightly so it is not axis-aliased.
    pub fn motion_line(size: usize, length: f64, angle: f64) -> Kernel {
        assert!(size % 2 == 1 && length >= 1.0);
        let c = (size / 2) as f64;
        let (dy, dx) = angle.sin_cos();
        let mut w = vec![0.0f32; size * size];
        let steps = (length * 8.0).ceil() as usize;
        for s in 0..=steps {
            let t = (s as f64 / steps as f64 - 0.5) * length;
            let y = c + t * dx;
            let x = c + t * dy;
            // bilinear splat
            let (i0, j0) = (y.floor(), x.floor());
            let (fi, fj) = (y - i0, x - j0);
            for (ii, jj, wt) in [
                (i0, j0, (1.0 - fi) * (1.0 - fj)),
                (i0, j0 + 1.0, (1.0 - fi) * fj),
                (i0 + 1.0, j0, fi * (1.0 - fj)),
                (i0 + 1.0, j0 + 1.0, fi * fj),
            ] {
                if ii >= 0.0 && jj >= 0.0 && (ii as usize) < size && (jj as usize) < size {
                    w[ii as usize * size + jj as usize] += wt as f32;
                }
            }
        }
        let line = Kernel::normalized(size, size, w).unwrap();
        // soften with a narrow Gaussian to mimic lens response
        let soft = Kernel::gaussian(3, 0.5);
        let mut blurred = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0.0f64;
                for u in 0..3usize {
                    for v in 0..3usize {
                        let ii = i as isize + u as isize - 1;
                        let jj = j as isize + v as isize - 1;
                        if ii >= 0 && jj >= 0 && (ii as usize) < size && (jj as usize) < size {
                            acc += soft.filter.get(u, v) as f64
                                * line.filter.get(ii as usize, jj as usize) as f64;
                        }
                    }
                }
                blurred[i * size + j] = acc as f32;
            }
        }
        Kernel::normalized(size, size, blurred).unwrap()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.filter.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.filter.width
    }
    #[inline]
    pub fn weights(&self) -> &[f32] {
        &self.filter.taps
    }
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.filter.get(u, v)
    }
    #[inline]
    pub fn filter(&self) -> &Filter2d {
        &self.filter
    }

    /// 180-degree rotation; the adjoint kernel of convolution.
    pub fn flipped(&self) -> Kernel {
        Kernel {
            filter: self.filter.flipped(),
        }
    }

    /// Parse the kernel text format.
    pub fn parse_text(text: &str) -> Result<Kernel> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CiderError::Format("empty kernel file".into()))?;
        let mut dims = header.split_whitespace();
        let h: usize = dims
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CiderError::Format("kernel header must be 'H W'".into()))?;
        let w: usize = dims
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CiderError::Format("kernel header must be 'H W'".into()))?;
        if dims.next().is_some() {
            return Err(CiderError::Format("kernel header must be 'H W'".into()));
        }
        let mut weights = Vec::with_capacity(h * w);
        for (row, line) in lines.by_ref().take(h).enumerate() {
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                let v: f32 = tok
                    .parse()
                    .map_err(|_| CiderError::Format(format!("bad weight '{tok}' in row {row}")))?;
                if v < 0.0 {
                    return Err(CiderError::Input(format!(
                        "kernel weight {v} in row {row} is negative"
                    )));
                }
                weights.push(v);
            }
        }
        if weights.len() != h * w {
            return Err(CiderError::Format(format!(
                "expected {} weights, found {}",
                h * w,
                weights.len()
            )));
        }
        Kernel::normalized(h, w, weights)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Kernel> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Kernel::parse_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.height(), self.width());
        for i in 0..self.height() {
            for j in 0..self.width() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }
}

/// 180-degree kernel rotation, free function form.
pub fn flip(k: &Kernel) -> Kernel {
    k.flipped()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_rejects_even_dims() {
        let err = Kernel::new(2, 3, vec![1.0 / 6.0; 6]);
        assert!(matches!(err, Err(CiderError::Config(_))));
    }

    #[test]
    fn kernel_rejects_negative_and_bad_sum() {
        assert!(Kernel::new(1, 3, vec![0.5, -0.1, 0.6]).is_err());
        assert!(Kernel::new(1, 3, vec![0.5, 0.1, 0.6]).is_err());
        assert!(Kernel::normalized(1, 3, vec![0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn flip_moves_corner() {
        // 1 at top-left ends up at bottom-right
        let mut w = vec![0.0; 9];
        w[0] = 1.0;
        let k = Kernel::new(3, 3, w).unwrap();
        let f = k.flipped();
        assert_eq!(f.get(2, 2), 1.0);
        assert_eq!(f.get(0, 0), 0.0);
    }

    #[test]
    fn flip_involution_and_gaussian_symmetry() {
        let g = Kernel::gaussian(5, 1.2);
        assert_eq!(g.flipped().flipped(), g);
        // centrosymmetric: flip leaves it unchanged
        assert_eq!(g.flipped(), g);
    }

    #[test]
    fn flip_index_arithmetic_oracle() {
        // Levin-style random motion kernel stand-in: arbitrary positive taps.
        let mut s = crate::rng::Stream::new(3, "flip-oracle");
        let (h, w) = (5, 7);
        let taps: Vec<f32> = (0..h * w).map(|_| s.next_f64() as f32).collect();
        let k = Kernel::normalized(h, w, taps).unwrap();
        let f = k.flipped();
        for i in 0..h {
            for j in 0..w {
                assert_eq!(f.get(i, j), k.get(h - 1 - i, w - 1 - j));
            }
        }
    }

    #[test]
    fn text_round_trip_and_normalization() {
        let text = "1 3\n2 4 2\n";
        let k = Kernel::parse_text(text).unwrap();
        assert_eq!(k.weights(), &[0.25, 0.5, 0.25]);
        let again = Kernel::parse_text(&k.to_text()).unwrap();
        assert_eq!(again, k);
    }

    #[test]
    fn text_errors() {
        assert!(matches!(Kernel::parse_text(""), Err(CiderError::Format(_))));
        assert!(matches!(
            Kernel::parse_text("3 3\n1 1 1\n1 1 1\n"),
            Err(CiderError::Format(_))
        ));
        assert!(matches!(
            Kernel::parse_text("1 3\n1 -1 1\n"),
            Err(CiderError::Input(_))
        ));
    }

    #[test]
    fn generated_kernels_are_valid() {
        for k in [
            Kernel::delta(1),
            Kernel::delta(5),
            Kernel::boxcar(3),
            Kernel::gaussian(15, 2.0),
            Kernel::motion_line(15, 9.0, 0.6),
            Kernel::motion_line(15, 7.0, 2.2),
        ] {
            let sum: f64 = k.weights().iter().map(|&w| w as f64).sum();
            assert!((sum - 1.0).abs() < 1e-5, "sum {sum}");
            assert!(k.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
