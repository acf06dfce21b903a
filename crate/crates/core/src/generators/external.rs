//! Image-to-video backend reached through an exchange directory.
//!
//! Request layout: `<req_id>/source.png` (source resized to the generation
//! resolution) and `<req_id>/request.json`. The backend answers with
//! `frame_001.png` .. `frame_T.png` and a `DONE` marker.

use serde::{Deserialize, Serialize};

use super::{FrameGenerator, FrameSequence, GenerationConfig, Generated};
use crate::error::{Error, Result};
use crate::exchange::Exchange;
use crate::media::{load_image, resize, save_image, Image, ResizeMode, SaliencyMap};

/// Contents of `request.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRequest {
    #[serde(rename = "T")]
    pub frames: usize,
    /// `[height, width]`.
    pub resolution: [usize; 2],
    pub sampler_steps: usize,
    pub guidance_first: f64,
    pub guidance_last: f64,
    pub frame_rate: usize,
    pub decode_chunk: usize,
    pub seed: u64,
}

impl From<&GenerationConfig> for FrameRequest {
    fn from(c: &GenerationConfig) -> Self {
        Self {
            frames: c.num_frames,
            resolution: [c.resolution.0, c.resolution.1],
            sampler_steps: c.sampler_steps,
            guidance_first: c.guidance_first,
            guidance_last: c.guidance_last,
            frame_rate: c.frame_rate,
            decode_chunk: c.decode_chunk,
            seed: c.seed,
        }
    }
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:03}.png")
}

/// Submits one request and collects `config.num_frames` frames at the
/// source's resolution.
pub fn generate_external(source: &Image, config: &GenerationConfig, backend: &Exchange, req_id: &str) -> Result<FrameSequence> {
    config.validate()?;
    let dir = backend.open_request(req_id)?;
    let (gh, gw) = config.resolution;
    save_image(&resize(source, gh, gw, ResizeMode::Bilinear)?, dir.join("source.png"))?;
    backend.submit(&dir, &FrameRequest::from(config))?;
    backend.wait(&dir)?;

    let expected = config.num_frames;
    let found = (1..).take_while(|&t| dir.join(frame_file_name(t)).exists()).count();
    if found < expected {
        return Err(Error::IncompleteSequence { expected, found });
    }
    let (h, w) = source.dims();
    let frames = (1..=expected)
        .map(|t| {
            let f = load_image(dir.join(frame_file_name(t)))?;
            resize(&f, h, w, ResizeMode::Bilinear)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence {
        source: source.clone(),
        frames,
        generator_id: format!("external:{}", backend.root.display()),
        config: config.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct ExternalGenerator {
    pub exchange: Exchange,
    pub config: GenerationConfig,
}

impl FrameGenerator for ExternalGenerator {
    fn id(&self) -> String {
        "external".into()
    }

    fn generate(&self, source: &Image, _mask: &SaliencyMap, frames: usize, seed: u64, request_id: &str) -> Result<Generated> {
        let config = GenerationConfig {
            num_frames: frames,
            seed,
            ..self.config.clone()
        };
        let mut sequence = generate_external(source, &config, &self.exchange, request_id)?;
        sequence.generator_id = self.id();
        Ok(Generated {
            sequence,
            analytic_flows: None,
        })
    }
}
