//! Target-frame generators: each turns one source image into `T` frames.
//!
//! Backends are interchangeable behind [`FrameGenerator`]. Generators that
//! know the exact motion they applied (spatial warps, synthetic scenes) also
//! return the analytic forward flow of every frame.

mod external;
mod synthetic;
mod warp;

pub use external::{generate_external, ExternalGenerator, FrameRequest};
pub use synthetic::{boundary_band, generate_synthetic_scene, SceneMotion, SyntheticScene, SyntheticSceneGenerator, VelocityRanges};
pub use warp::{generate_spatial_warp, SpatialWarp, SpatialWarpGenerator, WarpParams, WarpRanges};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::media::{Image, SaliencyMap};

/// Sampling parameters forwarded to an image-to-video backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub num_frames: usize,
    /// `(height, width)` the backend generates at.
    pub resolution: (usize, usize),
    pub sampler_steps: usize,
    pub guidance_first: f64,
    pub guidance_last: f64,
    pub frame_rate: usize,
    pub decode_chunk: usize,
    pub seed: u64,
    /// When false, a first frame that is a near-copy of the source is dropped
    /// at pairing time.
    pub keep_first_frame: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            num_frames: 14,
            resolution: (576, 1024),
            sampler_steps: 25,
            guidance_first: 3.0,
            guidance_last: 1.0,
            frame_rate: 7,
            decode_chunk: 8,
            seed: 0,
            keep_first_frame: true,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 1 {
            return Err(Error::InvalidConfig("num_frames must be >= 1".into()));
        }
        if self.sampler_steps < 1 {
            return Err(Error::InvalidConfig("sampler_steps must be >= 1".into()));
        }
        if !(self.guidance_first > 0.0 && self.guidance_last > 0.0) {
            return Err(Error::InvalidConfig("guidance scales must be > 0".into()));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidConfig("resolution must be nonzero".into()));
        }
        if self.decode_chunk < 1 || self.frame_rate < 1 {
            return Err(Error::InvalidConfig("decode_chunk and frame_rate must be >= 1".into()));
        }
        Ok(())
    }

    /// Snapshot for generators that do not sample a model.
    pub(crate) fn local(source: &Image, frames: usize, seed: u64) -> Self {
        Self {
            num_frames: frames,
            resolution: source.dims(),
            seed,
            ..Self::default()
        }
    }
}

/// Frames `I_1..I_T` produced from one source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub source: Image,
    pub frames: Vec<Image>,
    pub generator_id: String,
    pub config: GenerationConfig,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A generated sequence plus, when the generator knows it, the exact
/// source-anchored flow `F_{s->t}` of each frame.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sequence: FrameSequence,
    pub analytic_flows: Option<Vec<FlowField>>,
}

/// A pluggable target-frame backend.
pub trait FrameGenerator: Send + Sync {
    fn id(&self) -> String;

    /// `request_id` names the job for backends that need one (e.g. exchange
    /// directories); it must be unique per concurrent call.
    fn generate(
        &self,
        source: &Image,
        mask: &SaliencyMap,
        frames: usize,
        seed: u64,
        request_id: &str,
    ) -> Result<Generated>;
}

/// Every frame is the source itself.
pub fn generate_identity(source: &Image, frames: usize) -> FrameSequence {
    FrameSequence {
        source: source.clone(),
        frames: vec![source.clone(); frames],
        generator_id: IdentityGenerator.id(),
        config: GenerationConfig::local(source, frames, 0),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGenerator;

impl FrameGenerator for IdentityGenerator {
    fn id(&self) -> String {
        "identity".into()
    }

    fn generate(&self, source: &Image, _mask: &SaliencyMap, frames: usize, _seed: u64, _id: &str) -> Result<Generated> {
        let (h, w) = source.dims();
        Ok(Generated {
            sequence: generate_identity(source, frames),
            analytic_flows: Some(vec![FlowField::zeros(h, w); frames]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_frames() {
        let img = Image::from_fn(9, 10, |y, x, c| ((y + x + c) % 5) as f32 / 4.0);
        let seq = generate_identity(&img, 3);
        assert_eq!(seq.len(), 3);
        assert!(seq.frames.iter().all(|f| *f == img));
        assert_eq!(generate_identity(&img, 1).len(), 1);
    }

    #[test]
    fn default_config_matches_sampling_settings() {
        let c = GenerationConfig::default();
        assert_eq!(c.num_frames, 14);
        assert_eq!(c.sampler_steps, 25);
        assert_eq!((c.guidance_first, c.guidance_last), (3.0, 1.0));
        assert_eq!(c.resolution, (576, 1024));
        assert_eq!(c.frame_rate, 7);
        assert_eq!(c.decode_chunk, 8);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = GenerationConfig {
            num_frames: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig {
            guidance_last: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
