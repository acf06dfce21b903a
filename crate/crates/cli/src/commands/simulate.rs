use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use serde_json::json;
use simflow_core::generators::{ExternalGenerator, FrameGenerator, IdentityGenerator, SpatialWarpGenerator, SyntheticSceneGenerator};
use simflow_core::pairs::{find_mask, list_images, simulate_sources, FlowSource, SimulationOutcome, SimulationSettings, SourceItem};
use simflow_core::{flow_stats, load_image, load_mask, materialize_dataset};

use super::{estimator, exchange, require_dir, write_json, BUILD_REPORT};
use crate::config::{EstimatorKind, GeneratorKind, PipelineConfig};
use crate::{effective_config, with_workers, SimulateArgs};

fn configure(a: &SimulateArgs) -> Result<PipelineConfig> {
    let mut config = effective_config(&a.common)?;
    let pf = &mut config.pair_factory;
    if let Some(g) = a.generator {
        pf.generator = g;
    }
    if let Some(e) = a.estimator {
        pf.estimator = e;
    }
    if a.frame_exchange.is_some() {
        pf.frame_exchange = a.frame_exchange.clone();
    }
    if a.flow_exchange.is_some() {
        pf.flow_exchange = a.flow_exchange.clone();
    }
    pf.one_per_source |= a.one_per_source;
    if let Some(t) = a.frames {
        config.generation.num_frames = t;
    }
    let config = config.resolve();
    config.validate()?;
    let pf = &config.pair_factory;
    if pf.generator == GeneratorKind::External && pf.frame_exchange.is_none() {
        bail!("--generator external needs --frame-exchange");
    }
    if pf.estimator == EstimatorKind::Analytic && pf.generator == GeneratorKind::External {
        bail!("the external generator reports no analytic flow; choose --estimator builtin or external");
    }
    Ok(config)
}

/// Sources are the images in `images`, each with the mask sharing its stem.
pub fn load_sources(images: &std::path::Path, masks: &std::path::Path) -> Result<Vec<SourceItem>> {
    require_dir(images, "images")?;
    require_dir(masks, "masks")?;
    let paths = list_images(images)?;
    if paths.is_empty() {
        bail!("no images in {}", images.display());
    }
    let mut items = Vec::with_capacity(paths.len());
    for p in paths {
        let mask_path = find_mask(masks, &p).with_context(|| format!("no mask for {}", p.display()))?;
        let image = load_image(&p)?;
        let mask = load_mask(&mask_path, Some(0.5))?;
        if image.dims() != mask.dims() {
            bail!("{} is {:?} but its mask is {:?}", p.display(), image.dims(), mask.dims());
        }
        let source_id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        items.push(SourceItem { source_id, image, mask });
    }
    Ok(items)
}

pub fn run(a: &SimulateArgs) -> Result<()> {
    let config = configure(a)?;
    let items = load_sources(&a.images, &a.masks)?;
    let pf = &config.pair_factory;
    let generator: Box<dyn FrameGenerator> = match pf.generator {
        GeneratorKind::Identity => Box::new(IdentityGenerator),
        GeneratorKind::Warp => Box::new(SpatialWarpGenerator { ranges: config.warp.clone() }),
        GeneratorKind::Synthetic => Box::new(SyntheticSceneGenerator {
            velocities: config.synthetic.clone(),
        }),
        GeneratorKind::External => Box::new(ExternalGenerator {
            exchange: exchange(pf.frame_exchange.as_ref().expect("checked in configure"), &config)?,
            config: config.generation.clone(),
        }),
    };
    let est = match pf.estimator {
        EstimatorKind::Analytic => None,
        kind => Some(estimator(kind, pf.flow_exchange.as_ref(), &config)?),
    };
    let flow = match &est {
        Some(e) => FlowSource::Estimated(e.as_ref()),
        None => FlowSource::Analytic,
    };
    let settings = SimulationSettings {
        frames: config.generation.num_frames,
        seed: config.seed,
        one_per_source: pf.one_per_source,
    };
    let outcome = with_workers(config.workers, || Ok(simulate_sources(&items, generator.as_ref(), flow, &settings)))?;

    let created_with = json!({
        "command": "simulate",
        "config": config.to_json(),
        "generator": generator.id(),
        "flow_backend": est.as_ref().map(|e| e.id()).unwrap_or_else(|| "analytic".into()),
    });
    let report = build_report(&items, &outcome, settings.frames, &created_with);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join(BUILD_REPORT), &report)?;
    for (id, err) in &outcome.failed_sources {
        eprintln!("warning: source {id} skipped: {err}");
    }
    if outcome.pairs.is_empty() {
        bail!("no pairs produced; see {}", a.out.join(BUILD_REPORT).display());
    }
    let manifest = materialize_dataset(&outcome.pairs, &a.out, &created_with)?;
    println!(
        "{} pairs from {} sources written to {} ({} frames skipped, {} sources failed)",
        manifest.len(),
        items.len(),
        a.out.display(),
        report["totals"]["skipped_frames"],
        outcome.failed_sources.len()
    );
    Ok(())
}

fn build_report(items: &[SourceItem], outcome: &SimulationOutcome, frames: usize, created_with: &serde_json::Value) -> serde_json::Value {
    let mut pairs: BTreeMap<&str, usize> = BTreeMap::new();
    let (mut weighted, mut pixels, mut max_mag) = (0.0, 0usize, 0.0f64);
    for p in &outcome.pairs {
        *pairs.entry(p.source_id.as_str()).or_default() += 1;
        let s = flow_stats(&p.flow);
        let n = p.flow.height() * p.flow.width();
        weighted += s.mean_mag * n as f64;
        pixels += n;
        max_mag = max_mag.max(s.max_mag);
    }
    let mut skipped: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &outcome.skipped {
        *skipped.entry(s.source_id.as_str()).or_default() += 1;
    }
    let failed: BTreeMap<&str, &str> = outcome.failed_sources.iter().map(|(id, e)| (id.as_str(), e.as_str())).collect();
    let sources: Vec<_> = items
        .iter()
        .map(|item| {
            let id = item.source_id.as_str();
            match failed.get(id) {
                Some(err) => json!({"source_id": id, "status": "failed", "pairs": 0, "skipped_frames": frames, "error": err}),
                None => json!({
                    "source_id": id,
                    "status": "ok",
                    "pairs": pairs.get(id).copied().unwrap_or(0),
                    "skipped_frames": skipped.get(id).copied().unwrap_or(0),
                }),
            }
        })
        .collect();
    let skipped_frames = outcome.skipped.len() + frames * outcome.failed_sources.len();
    json!({
        "created_with": created_with,
        "totals": {
            "sources": items.len(),
            "succeeded_sources": items.len() - outcome.failed_sources.len(),
            "failed_sources": outcome.failed_sources.len(),
            "pairs": outcome.pairs.len(),
            "skipped_frames": skipped_frames,
        },
        "flow_stats": {
            "mean_magnitude": if pixels > 0 { weighted / pixels as f64 } else { 0.0 },
            "max_magnitude": max_mag,
        },
        "sources": sources,
        "skipped": outcome.skipped,
    })
}
