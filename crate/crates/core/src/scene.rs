//! Procedural textured sources with salient-object masks.
//!
//! Used as stand-ins for still-image saliency datasets in tests, benchmarks
//! and the desk-scale training experiments.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::media::{Image, SaliencyMap};

struct Wave {
    kx: f32,
    ky: f32,
    phase: f32,
    amp: f32,
}

fn waves(rng: &mut ChaCha8Rng, count: usize, wavelengths: (f32, f32)) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let lambda = rng.random_range(wavelengths.0..wavelengths.1);
            let theta = rng.random_range(0.0..std::f32::consts::PI);
            let k = std::f32::consts::TAU / lambda;
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.random_range(0.0..std::f32::consts::TAU),
                amp: rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

struct Texture {
    base: [f32; 3],
    channels: [Vec<Wave>; 3],
    contrast: f32,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, contrast: f32) -> Self {
        let base = [
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
        ];
        let channels = [
            waves(rng, 6, (5.0, 40.0)),
            waves(rng, 6, (5.0, 40.0)),
            waves(rng, 6, (5.0, 40.0)),
        ];
        Self {
            base,
            channels,
            contrast,
        }
    }

    fn at(&self, x: f32, y: f32, c: usize) -> f32 {
        let waves = &self.channels[c];
        let total: f32 = waves.iter().map(|w| w.amp).sum();
        let s: f32 = waves.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin()).sum();
        self.base[c] + self.contrast * s / total
    }
}

/// A textured `h x w` image with one blob-shaped salient object.
///
/// Object and background use independent random palettes and textures, so
/// appearance alone is only a partial cue.
pub fn textured_scene(height: usize, width: usize, seed: u64) -> (Image, SaliencyMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::random(&mut rng, 0.3);
    let object = Texture::random(&mut rng, 0.3);
    let (h, w) = (height as f32, width as f32);
    let cx = rng.random_range(0.35..0.65) * w;
    let cy = rng.random_range(0.35..0.65) * h;
    let rx = rng.random_range(0.16..0.28) * w;
    let ry = rng.random_range(0.16..0.28) * h;
    let tilt = rng.random_range(0.0..std::f32::consts::PI);
    let lobes = rng.random_range(2..5) as f32;
    let wobble = rng.random_range(0.0..0.2);
    let lobe_phase = rng.random_range(0.0..std::f32::consts::TAU);
    let (st, ct) = tilt.sin_cos();

    let mask = Array2::from_shape_fn((height, width), |(y, x)| {
        let dx = x as f32 + 0.5 - cx;
        let dy = y as f32 + 0.5 - cy;
        let a = (ct * dx + st * dy) / rx;
        let b = (-st * dx + ct * dy) / ry;
        let r = (a * a + b * b).sqrt();
        let angle = b.atan2(a);
        let limit = 1.0 + wobble * (lobes * angle + lobe_phase).sin();
        if r <= limit {
            1.0
        } else {
            0.0
        }
    });
    let image = Image::from_fn(height, width, |y, x, c| {
        let (fx, fy) = (x as f32, y as f32);
        if mask[[y, x]] > 0.5 {
            object.at(fx, fy, c)
        } else {
            background.at(fx, fy, c)
        }
    });
    (image, SaliencyMap::binary(mask).expect("binary by construction"))
}
