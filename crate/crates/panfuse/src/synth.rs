//! Seeded synthetic scenes so every experiment and test can run without
//! proprietary satellite data. Bands share a low-frequency field, a
//! high-frequency texture, and a few soft edges, with band-specific
//! variation on top; the panchromatic image is a weighted band sum and the
//! observed bands come from the modeled degradation of the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::{apply_h, DegradationSpec};
use crate::raster::MultiBandImage;

/// One generated scene: the panchromatic input, the observed low-resolution
/// bands, and the truth the observation was degraded from.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub pan: MultiBandImage,
    pub ms: MultiBandImage,
    pub truth: MultiBandImage,
}

/// Sum of `k` random-phase sinusoids with `cycles_min..cycles_max` cycles
/// per image edge, scaled to roughly unit amplitude.
fn smooth_field(
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
    k: usize,
    cycles_min: f64,
    cycles_max: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for _ in 0..k {
        let amp = rng.gen_range(0.5..1.0) / k as f64;
        let fr = rng.gen_range(cycles_min..cycles_max) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let fc = rng.gen_range(cycles_min..cycles_max) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for r in 0..height {
            for c in 0..width {
                let t = fr * r as f64 / height as f64 + fc * c as f64 / width as f64;
                out[r * width + c] += amp * (std::f64::consts::TAU * t + phase).sin();
            }
        }
    }
    out
}

/// Soft step of unit height across a random line.
fn edge_field(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = theta.sin_cos();
    let r0 = rng.gen_range(0.2..0.8) * height as f64;
    let c0 = rng.gen_range(0.2..0.8) * width as f64;
    let softness = rng.gen_range(0.8..2.0);
    let mut out = vec![0.0; width * height];
    for r in 0..height {
        for c in 0..width {
            let d = (c as f64 - c0) * cos + (r as f64 - r0) * sin;
            out[r * width + c] = (d / softness).tanh();
        }
    }
    out
}

/// Generates a scene of `width x height` truth pixels with `bands` bands.
/// The observed bands are `apply_h` of the truth, so `width` and `height`
/// must be divisible by the ratio in `spec`. Fully determined by `seed`.
pub fn synth_scene(
    width: usize,
    height: usize,
    bands: usize,
    spec: &DegradationSpec,
    seed: u64,
) -> Result<SyntheticScene> {
    if bands == 0 {
        return Err(Error::InvalidInput("scene needs at least one band".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared_low = smooth_field(width, height, &mut rng, 4, 0.5, 2.0);
    let shared_high = smooth_field(width, height, &mut rng, 6, 6.0, 14.0);
    let edges: Vec<Vec<f64>> = (0..3).map(|_| edge_field(width, height, &mut rng)).collect();

    let plane = width * height;
    let mut samples = Vec::with_capacity(plane * bands);
    for _ in 0..bands {
        let own = smooth_field(width, height, &mut rng, 2, 1.0, 3.0);
        let alpha = rng.gen_range(0.6..1.0);
        let gamma = rng.gen_range(0.5..1.0);
        let betas: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(0.4..1.0)).collect();
        for p in 0..plane {
            let mut v = 0.5 + 0.22 * alpha * shared_low[p] + 0.05 * own[p]
                + 0.07 * gamma * shared_high[p];
            for (edge, beta) in edges.iter().zip(&betas) {
                v += 0.05 * beta * edge[p];
            }
            samples.push(v.clamp(0.02, 0.98));
        }
    }
    let truth = MultiBandImage::new(width, height, bands, samples)?;

    let mut weights: Vec<f64> = (0..bands).map(|_| rng.gen_range(0.5..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let pan = MultiBandImage::from_fn(width, height, 1, |_, r, c| {
        (0..bands).map(|b| weights[b] * truth.get(b, r, c)).sum()
    });

    let ms = apply_h(&truth, spec)?;
    Ok(SyntheticScene { pan, ms, truth })
}
