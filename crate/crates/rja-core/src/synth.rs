//! Deterministic synthetic raw generation for tests and benchmarks.
//!
//! Produces images with the statistics that make linear sensor data hard for
//! an 8-bit display-referred codec: most values concentrated in the lower
//! intensity range (median luma well under 0.25), a global color cast biased
//! toward the green channel, and smooth regions plus gradients plus noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::{resample_plane, AxisMap, RawImage};
use crate::num::Scalar;

/// Generation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthProfile {
    /// Number of value-noise octaves in the base field.
    pub octaves: usize,
    /// Standard deviation of per-sample Gaussian noise.
    pub noise_sigma: f64,
    /// Target median of the base field before the color cast darkens it
    /// further.
    pub median_target: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            octaves: 4,
            noise_sigma: 0.003,
            median_target: 0.18,
        }
    }
}

impl SynthProfile {
    pub fn noiseless() -> SynthProfile {
        SynthProfile {
            noise_sigma: 0.0,
            ..SynthProfile::default()
        }
    }
}

/// Generate a deterministic synthetic raw image for the given seed.
pub fn synth_raw<T: Scalar>(
    seed: u64,
    width: usize,
    height: usize,
    profile: SynthProfile,
) -> RawImage<T> {
    assert!(width >= 1 && height >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Multi-octave value noise: coarse structure plus finer detail.
    let mut base = vec![0.0f64; width * height];
    let mut amplitude = 1.0f64;
    for octave in 0..profile.octaves.max(1) {
        let side = 4usize << octave;
        let grid: Vec<f64> = (0..side * side).map(|_| rng.gen::<f64>()).collect();
        let xs = AxisMap::<f64>::new(side, width);
        let ys = AxisMap::<f64>::new(side, height);
        let up = resample_plane(&grid, side, &xs, &ys);
        for (b, v) in base.iter_mut().zip(&up) {
            *b += amplitude * v;
        }
        amplitude *= 0.45;
    }

    // A directional gradient so the tonal distribution is not stationary.
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    let strength = 0.1 + 0.25 * rng.gen::<f64>();
    let (ca, sa) = (angle.cos(), angle.sin());
    let diag = ((width * width + height * height) as f64).sqrt();
    for y in 0..height {
        for x in 0..width {
            let t = (x as f64 * ca + y as f64 * sa) / diag + 0.5;
            base[y * width + x] += strength * t;
        }
    }

    // Normalize to [0, 1].
    let lo = base.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-12);
    for v in &mut base {
        *v = (*v - lo) / range;
    }

    // Skew dark: raise to the exponent that maps the current median onto the
    // target (linear sensors put most mass in the low range).
    let mut sorted = base.clone();
    let mid = sorted.len() / 2;
    sorted.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let median = sorted[mid].clamp(1e-4, 0.999);
    let k = profile.median_target.ln() / median.ln();
    for v in &mut base {
        *v = v.powf(k);
    }

    // Global color cast: cameras capture proportionally more green light.
    let gains = [
        0.40 + 0.15 * rng.gen::<f64>(),
        0.85 + 0.15 * rng.gen::<f64>(),
        0.45 + 0.20 * rng.gen::<f64>(),
    ];

    let mut data = vec![T::zero(); width * height * 3];
    for (i, &b) in base.iter().enumerate() {
        for c in 0..3 {
            let noise = if profile.noise_sigma > 0.0 {
                // Box-Muller transform of two uniform draws.
                let u1: f64 = rng.gen::<f64>().max(1e-12);
                let u2: f64 = rng.gen();
                profile.noise_sigma
                    * (-2.0 * u1.ln()).sqrt()
                    * (std::f64::consts::TAU * u2).cos()
            } else {
                0.0
            };
            data[i * 3 + c] = T::c((b * gains[c] + noise).clamp(0.0, 1.0));
        }
    }
    RawImage::new(width, height, data)
}
