//! Image–flow–mask training pairs.
//!
//! A source image with its mask is expanded into `T` target frames; each
//! frame contributes one pair holding the source image, the source mask and
//! the flow from the source to that frame.

mod dataset;
mod video;

pub use dataset::{load_manifest, load_pair, materialize_dataset, DatasetManifest, ManifestEntry, PairMeta};
pub use video::ingest_real_video;
pub use video::{find_mask, list_images};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FlowEstimator;
use crate::exchange::fnv1a;
use crate::flow::FlowField;
use crate::generators::{FrameGenerator, FrameSequence, Generated};
use crate::media::{Image, SaliencyMap};

/// Where a pair came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Simulated,
    Real(String),
}

impl Provenance {
    pub fn is_simulated(&self) -> bool {
        matches!(self, Provenance::Simulated)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Simulated => f.write_str("simulated"),
            Provenance::Real(name) => write!(f, "real:{name}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "simulated" => Ok(Provenance::Simulated),
            Some(("real", name)) if !name.is_empty() => Ok(Provenance::Real(name.to_string())),
            _ => Err(Error::InvalidConfig(format!("unknown provenance {s:?}"))),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a pair's flow relates to its neighbouring frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    #[default]
    Forward,
    /// Backward flow to the previous frame, negated (last frame of a clip).
    NegatedBackward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub image: Image,
    pub flow: FlowField,
    pub mask: SaliencyMap,
    pub source_id: String,
    pub t: usize,
    pub provenance: Provenance,
    pub generator_id: String,
    pub flow_backend_id: String,
    pub flow_kind: FlowKind,
}

impl TrainingPair {
    /// Filesystem-safe identifier, unique per (provenance, source, t).
    pub fn pair_id(&self) -> String {
        let prefix = match &self.provenance {
            Provenance::Simulated => "sim".to_string(),
            Provenance::Real(name) => format!("real-{}", sanitize(name)),
        };
        format!("{prefix}-{}-{:03}", sanitize(&self.source_id), self.t)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.image.dims();
        for found in [self.flow.dims(), self.mask.dims()] {
            if found != dims {
                return Err(Error::DimensionMismatch { expected: dims, found });
            }
        }
        Ok(())
    }
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// `[(I_s, I_1), …, (I_s, I_T)]`.
pub fn build_temporary_pairs(source: &Image, seq: &FrameSequence) -> Vec<(Image, Image)> {
    seq.frames.iter().map(|f| (source.clone(), f.clone())).collect()
}

/// A frame that produced no pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub source_id: String,
    pub t: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FinalPairs {
    pub pairs: Vec<TrainingPair>,
    pub skipped: Vec<SkippedFrame>,
}

/// Mean absolute difference below which a first frame counts as a copy of
/// the source.
const NEAR_COPY: f64 = 1.0 / 255.0;

/// Frames that are kept for pairing, as `(t, frame)` with `t` 1-based.
fn usable_frames<'a>(source: &Image, seq: &'a FrameSequence, skipped: &mut Vec<SkippedFrame>, source_id: &str) -> Vec<(usize, &'a Image)> {
    let mut out = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames.iter().enumerate() {
        let t = i + 1;
        if t == 1 && !seq.config.keep_first_frame && source.mean_abs_diff(frame).map(|d| d < NEAR_COPY).unwrap_or(false) {
            skipped.push(SkippedFrame {
                source_id: source_id.to_string(),
                t,
                reason: "first frame duplicates the source".into(),
            });
            continue;
        }
        out.push((t, frame));
    }
    out
}

/// One simulated pair per frame with `flow = estimator(I_s, I_t)`. Frames
/// whose estimation fails are skipped and reported.
pub fn build_final_pairs(
    source_id: &str,
    source: &Image,
    mask: &SaliencyMap,
    seq: &FrameSequence,
    estimator: &dyn FlowEstimator,
) -> Result<FinalPairs> {
    check_aligned(source, mask)?;
    let mut out = FinalPairs::default();
    for (t, frame) in usable_frames(source, seq, &mut out.skipped, source_id) {
        match estimator.estimate(source, frame) {
            Ok(flow) => out.pairs.push(simulated(source_id, source, mask, seq, flow, t, estimator.id())),
            Err(e) => {
                log::warn!("skipping {source_id} frame {t}: {e}");
                out.skipped.push(SkippedFrame {
                    source_id: source_id.to_string(),
                    t,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Pairs whose flows are the generator's own analytic displacements.
pub fn build_analytic_pairs(source_id: &str, source: &Image, mask: &SaliencyMap, generated: &Generated) -> Result<FinalPairs> {
    check_aligned(source, mask)?;
    let flows = generated
        .analytic_flows
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("generator {} has no analytic flow", generated.sequence.generator_id)))?;
    let seq = &generated.sequence;
    let mut out = FinalPairs::default();
    for (t, _) in usable_frames(source, seq, &mut out.skipped, source_id) {
        out.pairs.push(simulated(source_id, source, mask, seq, flows[t - 1].clone(), t, "analytic".into()));
    }
    Ok(out)
}

fn check_aligned(source: &Image, mask: &SaliencyMap) -> Result<()> {
    if source.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: source.dims(),
            found: mask.dims(),
        });
    }
    Ok(())
}

fn simulated(
    source_id: &str,
    source: &Image,
    mask: &SaliencyMap,
    seq: &FrameSequence,
    flow: FlowField,
    t: usize,
    flow_backend_id: String,
) -> TrainingPair {
    TrainingPair {
        image: source.clone(),
        flow,
        mask: mask.clone(),
        source_id: source_id.to_string(),
        t,
        provenance: Provenance::Simulated,
        generator_id: seq.generator_id.clone(),
        flow_backend_id,
        flow_kind: FlowKind::Forward,
    }
}

/// A still image with its saliency annotation.
#[derive(Debug, Clone)]
pub struct SourceItem {
    pub source_id: String,
    pub image: Image,
    pub mask: SaliencyMap,
}

/// Where simulated pairs take their flow from.
#[derive(Clone, Copy)]
pub enum FlowSource<'a> {
    Estimated(&'a dyn FlowEstimator),
    Analytic,
}

#[derive(Debug, Clone)]
pub struct SimulationSettings {
    pub frames: usize,
    pub seed: u64,
    /// Keep a single, seed-chosen frame per source instead of all `T`.
    pub one_per_source: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SimulationOutcome {
    pub pairs: Vec<TrainingPair>,
    pub skipped: Vec<SkippedFrame>,
    /// Sources whose generation failed outright, with the error.
    pub failed_sources: Vec<(String, String)>,
}

/// Per-source seed that does not depend on the position of the source in
/// the batch.
pub fn source_seed(seed: u64, source_id: &str) -> u64 {
    fnv1a(&[&seed.to_le_bytes(), source_id.as_bytes()])
}

/// Runs generation and flow estimation for every source on the current
/// rayon pool. Output order follows input order regardless of scheduling.
pub fn simulate_sources(
    items: &[SourceItem],
    generator: &dyn FrameGenerator,
    flow: FlowSource<'_>,
    settings: &SimulationSettings,
) -> SimulationOutcome {
    let results: Vec<std::result::Result<FinalPairs, String>> = items
        .par_iter()
        .map(|item| {
            let seed = source_seed(settings.seed, &item.source_id);
            let request_id = format!("gen-{}", sanitize(&item.source_id));
            let generated = generator
                .generate(&item.image, &item.mask, settings.frames, seed, &request_id)
                .map_err(|e| e.to_string())?;
            let mut fin = match flow {
                FlowSource::Estimated(est) => build_final_pairs(&item.source_id, &item.image, &item.mask, &generated.sequence, est),
                FlowSource::Analytic => build_analytic_pairs(&item.source_id, &item.image, &item.mask, &generated),
            }
            .map_err(|e| e.to_string())?;
            if settings.one_per_source && !fin.pairs.is_empty() {
                let keep = (seed % fin.pairs.len() as u64) as usize;
                fin.pairs = vec![fin.pairs.swap_remove(keep)];
            }
            Ok(fin)
        })
        .collect();
    let mut out = SimulationOutcome::default();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(fin) => {
                out.pairs.extend(fin.pairs);
                out.skipped.extend(fin.skipped);
            }
            Err(e) => {
                log::warn!("source {} failed: {e}", item.source_id);
                out.failed_sources.push((item.source_id.clone(), e));
            }
        }
    }
    out
}
