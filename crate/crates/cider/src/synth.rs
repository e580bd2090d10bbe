//! Deterministic synthetic fixtures: test charts, microscopy-like composites.
//!
//! Everything here is generated from closed formulas or seeded streams so
//! tests and examples never depend on external data.

use crate::rng::Stream;
use crate::tensor::Image;

/// Resolution chart with structure at several scales: gradient background,
/// concentric rings, two checkerboard patches, bar gratings and blobs.
pub fn test_chart(h: usize, w: usize) -> Image {
    let (hf, wf) = (h as f32, w as f32);
    Image::from_fn(h, w, |i, j| {
        let (fi, fj) = (i as f32, j as f32);
        let mut v = 0.25 + 0.3 * fj / wf;

        // concentric rings around the center
        let di = fi - hf / 2.0;
        let dj = fj - wf / 2.0;
        let dist = (di * di + dj * dj).sqrt();
        for r in [hf / 6.0, hf / 3.8, hf / 2.6] {
            if (dist - r).abs() < 1.5 {
                v = 0.9;
            }
        }

        // coarse checkerboard, top-left
        if i < h / 3 && j < w / 3 {
            v = if (i / 4 + j / 4) % 2 == 0 { 0.85 } else { 0.15 };
        }
        // fine checkerboard, top-right
        if i < h / 4 && j > 3 * w / 4 {
            v = if (i / 2 + j / 2) % 2 == 0 { 0.8 } else { 0.2 };
        }
        // horizontal grating, bottom-left
        if i > 3 * h / 4 && j < w / 4 {
            v = if (i / 3) % 2 == 0 { 0.75 } else { 0.2 };
        }
        // vertical grating, bottom-right
        if i > 4 * h / 5 && j > 4 * w / 5 {
            v = if (j / 3) % 2 == 0 { 0.7 } else { 0.25 };
        }

        // one bright and one dark blob
        let blob = |ci: f32, cj: f32, s: f32| {
            let bi = (fi - ci) / s;
            let bj = (fj - cj) / s;
            (-(bi * bi + bj * bj)).exp()
        };
        v += 0.5 * blob(hf * 0.3, wf * 0.65, hf / 16.0);
        v -= 0.4 * blob(hf * 0.7, wf * 0.35, hf / 14.0);

        v.clamp(0.03, 0.97)
    })
}

/// Microscopy-style composite: sparse bright spots over a smooth background.
#[derive(Debug, Clone)]
pub struct SpotsFixture {
    pub composite: Image,
    pub background: Image,
    pub spots: Vec<(usize, usize)>,
    pub background_amplitude: f32,
    pub spot_amplitude: f32,
}

impl SpotsFixture {
    /// True when (i, j) lies within Chebyshev distance `radius` of any spot.
    pub fn near_spot(&self, i: usize, j: usize, radius: usize) -> bool {
        self.spots.iter().any(|&(si, sj)| {
            i.abs_diff(si) <= radius && j.abs_diff(sj) <= radius
        })
    }
}

/// Build a spots-on-smooth-background composite with known ground truth.
///
/// The layout follows the regime the wavelet background estimator assumes:
/// a dim, gently varying background (within ~8% of its level) plus enough
/// bright spot mass to pull the image mean above every background pixel.
pub fn spots_on_background(h: usize, w: usize, seed: u64) -> SpotsFixture {
    let background_amplitude = 0.18f32;
    let spot_amplitude = 0.8f32;
    let spot_sigma = 3.0f32;
    let n_spots = (h * w / 4400).clamp(6, 32);
    let (hf, wf) = (h as f32, w as f32);
    let background = Image::from_fn(h, w, |i, j| {
        let (fi, fj) = (i as f32, j as f32);
        let hill = |ci: f32, cj: f32, s: f32| {
            let di = (fi - ci) / s;
            let dj = (fj - cj) / s;
            (-(di * di + dj * dj)).exp()
        };
        let undulation = 0.5 * hill(hf * 0.35, wf * 0.4, hf * 0.51)
            + 0.5 * hill(hf * 0.7, wf * 0.75, hf * 0.45);
        background_amplitude * (0.95 + 0.05 * undulation)
    });

    let mut stream = Stream::new(seed, "spots");
    let mut spots: Vec<(usize, usize)> = Vec::new();
    let margin = 14usize;
    while spots.len() < n_spots {
        let i = margin + (stream.next_u64() as usize) % (h - 2 * margin);
        let j = margin + (stream.next_u64() as usize) % (w - 2 * margin);
        if spots
            .iter()
            .all(|&(si, sj)| i.abs_diff(si) > 14 || j.abs_diff(sj) > 14)
        {
            spots.push((i, j));
        }
    }

    let composite = Image::from_fn(h, w, |i, j| {
        let mut v = background.get(i, j);
        for &(si, sj) in &spots {
            let di = (i as f32 - si as f32) / spot_sigma;
            let dj = (j as f32 - sj as f32) / spot_sigma;
            v += spot_amplitude * (-0.5 * (di * di + dj * dj)).exp();
        }
        v.min(1.0)
    });

    SpotsFixture {
        composite,
        background,
        spots,
        background_amplitude,
        spot_amplitude,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_in_range() {
        let a = test_chart(64, 64);
        let b = test_chart(64, 64);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // enough variation to be a meaningful target
        let mean = a.tensor().mean();
        let var = a
            .data()
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / a.data().len() as f64;
        assert!(var > 0.01, "variance {var}");
    }

    #[test]
    fn spots_fixture_is_in_estimator_regime() {
        let f = spots_on_background(256, 256, 11);
        assert!(f.composite.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // spots are actually bright relative to background
        for &(i, j) in &f.spots {
            assert!(f.composite.get(i, j) - f.background.get(i, j) > 0.6);
        }
        // spot mass lifts the global mean above every background pixel,
        // which is what makes mean-thresholding isolate the background
        let mean = f.composite.tensor().mean() as f32;
        assert!(mean > f.background.tensor().max(), "mean {mean}");
    }
}
