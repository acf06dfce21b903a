//! Layered synthetic scenes: a masked foreground translating independently
//! of a translating background. The analytic flow is piecewise constant and
//! breaks exactly along the object boundary.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameGenerator, FrameSequence, GenerationConfig, Generated};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::media::{sample_plane, sample_rgb, Image, SaliencyMap};

/// Per-frame velocities in pixels, `(dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMotion {
    pub fg_velocity: (f64, f64),
    pub bg_velocity: (f64, f64),
}

/// Speed ranges (px/frame) random scene motions are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocityRanges {
    pub fg_speed: (f64, f64),
    pub bg_speed: (f64, f64),
}

impl Default for VelocityRanges {
    fn default() -> Self {
        Self {
            fg_speed: (1.0, 3.0),
            bg_speed: (0.0, 1.0),
        }
    }
}

impl VelocityRanges {
    pub fn sample(&self, seed: u64) -> SceneMotion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| {
            let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            (speed * angle.cos(), speed * angle.sin())
        };
        SceneMotion {
            fg_velocity: draw(self.fg_speed),
            bg_velocity: draw(self.bg_speed),
        }
    }
}

/// A source image split into a moving foreground layer and a background
/// plate whose masked region is filled by edge replication.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    source: Image,
    mask: Array2<f32>,
    plate: Image,
    motion: SceneMotion,
}

impl SyntheticScene {
    pub fn new(source: &Image, mask: &SaliencyMap, motion: SceneMotion) -> Result<Self> {
        if source.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: source.dims(),
                found: mask.dims(),
            });
        }
        let v = motion.fg_velocity;
        let b = motion.bg_velocity;
        if ![v.0, v.1, b.0, b.1].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("velocities must be finite".into()));
        }
        let mask = mask.binarize(0.5).into_values();
        if !mask.iter().any(|&m| m > 0.5) {
            return Err(Error::EmptyMask);
        }
        let plate = background_plate(source, &mask);
        Ok(Self {
            source: source.clone(),
            mask,
            plate,
            motion,
        })
    }

    pub fn motion(&self) -> SceneMotion {
        self.motion
    }

    pub fn dims(&self) -> (usize, usize) {
        self.source.dims()
    }

    fn offsets(&self, t: f64) -> ((f32, f32), (f32, f32)) {
        let f = self.motion.fg_velocity;
        let b = self.motion.bg_velocity;
        (
            ((f.0 * t) as f32, (f.1 * t) as f32),
            ((b.0 * t) as f32, (b.1 * t) as f32),
        )
    }

    fn covered(&self, x: usize, y: usize, fg: (f32, f32)) -> bool {
        let (h, w) = self.dims();
        let sx = x as f32 - fg.0;
        let sy = y as f32 - fg.1;
        // the object does not wrap in from outside the frame
        if sx < -0.5 || sy < -0.5 || sx > w as f32 - 0.5 || sy > h as f32 - 0.5 {
            return false;
        }
        sample_plane(&self.mask.view(), sx, sy) >= 0.5
    }

    /// Object support in frame `t`.
    pub fn mask_at(&self, t: f64) -> SaliencyMap {
        let (h, w) = self.dims();
        let (fg, _) = self.offsets(t);
        let values = Array2::from_shape_fn((h, w), |(y, x)| if self.covered(x, y, fg) { 1.0 } else { 0.0 });
        SaliencyMap::binary(values).expect("binary by construction")
    }

    /// Rendered frame `t` (`t = 0` is the source up to the plate fill).
    pub fn frame(&self, t: f64) -> Image {
        let (h, w) = self.dims();
        let (fg, bg) = self.offsets(t);
        let samples: Vec<[f32; 3]> = (0..h * w)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if self.covered(x, y, fg) {
                    sample_rgb(&self.source, x as f32 - fg.0, y as f32 - fg.1)
                } else {
                    sample_rgb(&self.plate, x as f32 - bg.0, y as f32 - bg.1)
                }
            })
            .collect();
        Image::from_fn(h, w, |y, x, c| samples[y * w + x][c])
    }

    /// Source-anchored flow `F_{0->t}`: foreground velocity times `t` on the
    /// source mask, background velocity times `t` elsewhere.
    pub fn flow(&self, t: f64) -> FlowField {
        let (h, w) = self.dims();
        let (fg, bg) = self.offsets(t);
        FlowField::from_fn(h, w, |y, x| if self.mask[[y, x]] > 0.5 { fg } else { bg }).expect("finite")
    }

    /// Flow from frame `t` to frame `t + 1`, anchored on frame `t`.
    pub fn step_flow(&self, t: f64) -> FlowField {
        let (h, w) = self.dims();
        let (fg_t, _) = self.offsets(t);
        let f = self.motion.fg_velocity;
        let b = self.motion.bg_velocity;
        let fg = (f.0 as f32, f.1 as f32);
        let bg = (b.0 as f32, b.1 as f32);
        FlowField::from_fn(h, w, |y, x| if self.covered(x, y, fg_t) { fg } else { bg }).expect("finite")
    }

    /// Source pixels whose content is visible, unoccluded and not produced
    /// by plate fill in frame `t`, at least `margin` pixels from the image
    /// border and the object boundary.
    pub fn reliable_pixels(&self, t: f64, margin: usize) -> Array2<bool> {
        let (h, w) = self.dims();
        let (fg, bg) = self.offsets(t);
        let near_edge = boundary_band(&self.mask, margin);
        Array2::from_shape_fn((h, w), |(y, x)| {
            if near_edge[[y, x]] {
                return false;
            }
            let is_fg = self.mask[[y, x]] > 0.5;
            let d = if is_fg { fg } else { bg };
            let tx = x as f32 + d.0;
            let ty = y as f32 + d.1;
            let m = margin as f32;
            if tx < m || ty < m || tx > (w - 1) as f32 - m || ty > (h - 1) as f32 - m {
                return false;
            }
            if is_fg {
                return true;
            }
            let (rx, ry) = (tx.round() as usize, ty.round() as usize);
            !self.covered(rx, ry, fg)
        })
    }
}

/// True for pixels within `radius` (Chebyshev distance) of a mask label change.
pub fn boundary_band(mask: &Array2<f32>, radius: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    let r = radius as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let here = mask[[y, x]] > 0.5;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && (mask[[yy as usize, xx as usize]] > 0.5) != here {
                    return true;
                }
            }
        }
        false
    })
}

fn background_plate(source: &Image, mask: &Array2<f32>) -> Image {
    let (h, w) = source.dims();
    let is_bg = |y: usize, x: usize| mask[[y, x]] <= 0.5;
    let mut fill: Vec<Option<(usize, usize)>> = vec![None; h * w];
    for y in 0..h {
        for x in 0..w {
            if is_bg(y, x) {
                fill[y * w + x] = Some((y, x));
                continue;
            }
            let left = (0..x).rev().find(|&xx| is_bg(y, xx)).map(|xx| (x - xx, (y, xx)));
            let right = (x + 1..w).find(|&xx| is_bg(y, xx)).map(|xx| (xx - x, (y, xx)));
            let up = (0..y).rev().find(|&yy| is_bg(yy, x)).map(|yy| (y - yy, (yy, x)));
            let down = (y + 1..h).find(|&yy| is_bg(yy, x)).map(|yy| (yy - y, (yy, x)));
            let row = [left, right].into_iter().flatten().min_by_key(|c| c.0);
            let col = [up, down].into_iter().flatten().min_by_key(|c| c.0);
            fill[y * w + x] = row.or(col).map(|c| c.1);
        }
    }
    let mut mean = [0.0f64; 3];
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if is_bg(y, x) {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += source.get(y, x, c) as f64;
                }
                n += 1;
            }
        }
    }
    let mean = mean.map(|m| if n > 0 { (m / n as f64) as f32 } else { 0.5 });
    Image::from_fn(h, w, |y, x, c| match fill[y * w + x] {
        Some((sy, sx)) => source.get(sy, sx, c),
        None => mean[c],
    })
}

/// Frames `1..=T` of a layered scene plus their analytic flows.
pub fn generate_synthetic_scene(
    mask: &SaliencyMap,
    source: &Image,
    fg_velocity: (f64, f64),
    bg_velocity: (f64, f64),
    frames: usize,
) -> Result<(FrameSequence, Vec<FlowField>)> {
    let scene = SyntheticScene::new(
        source,
        mask,
        SceneMotion {
            fg_velocity,
            bg_velocity,
        },
    )?;
    let images = (1..=frames).map(|t| scene.frame(t as f64)).collect();
    let flows = (1..=frames).map(|t| scene.flow(t as f64)).collect();
    Ok((
        FrameSequence {
            source: source.clone(),
            frames: images,
            generator_id: "synthetic-scene".into(),
            config: GenerationConfig::local(source, frames, 0),
        },
        flows,
    ))
}

/// Draws independent foreground/background velocities per source.
#[derive(Debug, Clone, Default)]
pub struct SyntheticSceneGenerator {
    pub velocities: VelocityRanges,
}

impl FrameGenerator for SyntheticSceneGenerator {
    fn id(&self) -> String {
        "synthetic-scene".into()
    }

    fn generate(&self, source: &Image, mask: &SaliencyMap, frames: usize, seed: u64, _id: &str) -> Result<Generated> {
        let motion = self.velocities.sample(seed);
        let (mut sequence, flows) =
            generate_synthetic_scene(mask, source, motion.fg_velocity, motion.bg_velocity, frames)?;
        sequence.config.seed = seed;
        Ok(Generated {
            sequence,
            analytic_flows: Some(flows),
        })
    }
}
