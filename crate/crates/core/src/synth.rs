//! Seeded synthetic "camera" images for experiments without a photo
//! collection: smooth color fields with random shapes, plus per-pixel sensor
//! noise, quantized to 8 bits.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::params::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Standard deviation of the additive Gaussian sensor noise, in `[0, 1]`
    /// intensity units.
    pub noise_sigma: f64,
    /// Inclusive range of shapes drawn over the background.
    pub shapes: [u32; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.03,
            shapes: [3, 8],
        }
    }
}

/// One image, a pure function of `(height, width, cfg, seed)`.
pub fn synthetic_image(height: usize, width: usize, cfg: &SynthConfig, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);

    // Background: a base color plus two low-frequency plane waves per channel.
    let mut waves = Vec::new();
    for _ in 0..3 {
        let base = rng.random_range(0.2..0.8);
        let comps: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                let angle = rng.random_range(0.0..TAU);
                let freq = rng.random_range(0.5..2.5) / hf.max(wf);
                let amp = rng.random_range(0.05..0.2);
                let phase = rng.random_range(0.0..TAU);
                (angle, freq, amp, phase)
            })
            .collect();
        waves.push((base, comps));
    }
    let mut data = vec![0.0f64; height * width * 3];
    for r in 0..height {
        for c in 0..width {
            for (ch, (base, comps)) in waves.iter().enumerate() {
                let v = comps.iter().fold(*base, |acc, &(a, f, amp, ph)| {
                    let t = (c as f64 * a.cos() + r as f64 * a.sin()) * f * TAU + ph;
                    acc + amp * t.sin()
                });
                data[(r * width + c) * 3 + ch] = v;
            }
        }
    }

    let n_shapes = rng.random_range(cfg.shapes[0]..=cfg.shapes[1].max(cfg.shapes[0]));
    for _ in 0..n_shapes {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let ry = rng.random_range(0.05..0.3) * hf;
        let rx = rng.random_range(0.05..0.3) * wf;
        let ellipse = rng.random_bool(0.5);
        // Stripe texture inside some shapes.
        let stripes = rng
            .random_bool(0.4)
            .then(|| (rng.random_range(0.0..TAU), rng.random_range(2.0..6.0)));
        for r in 0..height {
            for c in 0..width {
                let (dy, dx) = ((r as f64 + 0.5 - cy) / ry, (c as f64 + 0.5 - cx) / rx);
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                let shade = match stripes {
                    Some((a, period)) => {
                        let t = (c as f64 * a.cos() + r as f64 * a.sin()) / period;
                        0.85 + 0.15 * (t * TAU).sin()
                    }
                    None => 1.0,
                };
                for (ch, col) in color.iter().enumerate() {
                    data[(r * width + c) * 3 + ch] = col * shade;
                }
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let pixels = data
        .into_iter()
        .map(|v| {
            let n = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            ((v + n).clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
        })
        .collect();
    Image::new(height, width, pixels).expect("buffer matches dimensions")
}

/// `count` images; image `i` uses a seed derived from `(seed, i)`.
pub fn synthetic_images(
    count: usize,
    height: usize,
    width: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Vec<Image> {
    (0..count)
        .map(|i| synthetic_image(height, width, cfg, derive_seed(seed, &format!("synth{i}"))))
        .collect()
}
