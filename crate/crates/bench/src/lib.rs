//! Shared fixtures for the benchmarks.

use simflow_core::scene::textured_scene;
use simflow_core::{FlowField, Image, SaliencyMap};

/// A textured scene and a copy shifted 2 px to the right.
pub fn scene_pair(side: usize, seed: u64) -> (Image, Image, SaliencyMap) {
    let (image, mask) = textured_scene(side, side, seed);
    let shifted = Image::from_fn(side, side, |y, x, c| image.get(y, x.saturating_sub(2), c));
    (image, shifted, mask)
}

pub fn smooth_flow(h: usize, w: usize) -> FlowField {
    FlowField::from_fn(h, w, |y, x| ((x as f32 * 0.05).sin() * 3.0, (y as f32 * 0.07).cos() * 2.0)).expect("finite flow")
}
