use std::path::PathBuf;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;
use simflow_core::pairs::list_images;
use simflow_core::{flow_stats, ingest_real_video, materialize_dataset};

use super::{estimator, require_dir, write_json, BUILD_REPORT};
use crate::config::EstimatorKind;
use crate::{effective_config, with_workers, BuildDatasetArgs};

/// `(frames_dir, masks_dir)` per clip: subdirectories when present,
/// otherwise the directories themselves.
fn clips(a: &BuildDatasetArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&a.frames)?.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Ok(vec![(a.frames.clone(), a.masks.clone())]);
    }
    Ok(subdirs
        .into_iter()
        .map(|d| {
            let masks = a.masks.join(d.file_name().expect("directory entry has a name"));
            (d, masks)
        })
        .collect())
}

pub fn run(a: &BuildDatasetArgs) -> Result<()> {
    let mut config = effective_config(&a.common)?;
    if let Some(e) = a.estimator {
        config.pair_factory.estimator = e;
    }
    if a.flow_exchange.is_some() {
        config.pair_factory.flow_exchange = a.flow_exchange.clone();
    }
    let config = config.resolve();
    config.validate()?;
    if config.pair_factory.estimator == EstimatorKind::Analytic {
        bail!("real clips have no analytic flow; choose --estimator builtin or external");
    }
    if a.name.is_empty() || a.name == "simulated" {
        bail!("--name must be a non-empty dataset name other than \"simulated\"");
    }
    require_dir(&a.frames, "frames")?;
    require_dir(&a.masks, "masks")?;
    let clips = clips(a)?;
    for (_, masks) in &clips {
        require_dir(masks, "masks")?;
    }
    let est = estimator(config.pair_factory.estimator, config.pair_factory.flow_exchange.as_ref(), &config)?;

    let results = with_workers(config.workers, || {
        clips
            .par_iter()
            .map(|(frames, masks)| {
                let n = list_images(frames)?.len();
                let pairs = ingest_real_video(frames, masks, est.as_ref(), &a.name)?;
                Ok((n, pairs))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let created_with = json!({
        "command": "build-dataset",
        "dataset": a.name,
        "config": config.to_json(),
        "flow_backend": est.id(),
    });
    let mut all = Vec::new();
    let mut per_clip = Vec::new();
    for ((frames, _), (n, pairs)) in clips.iter().zip(results) {
        let clip = frames.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        per_clip.push(json!({"clip": clip, "frames": n, "pairs": pairs.len(), "skipped_frames": n - pairs.len()}));
        all.extend(pairs);
    }
    let mean_mag = if all.is_empty() {
        0.0
    } else {
        all.iter().map(|p| flow_stats(&p.flow).mean_mag).sum::<f64>() / all.len() as f64
    };
    let report = json!({
        "created_with": created_with,
        "totals": {"clips": clips.len(), "pairs": all.len()},
        "flow_stats": {"mean_magnitude": mean_mag},
        "clips": per_clip,
    });
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(BUILD_REPORT), &report)?;
    if all.is_empty() {
        bail!("no annotated frames found; see {}", a.out.join(BUILD_REPORT).display());
    }
    let manifest = materialize_dataset(&all, &a.out, &created_with)?;
    println!("{} pairs from {} clips written to {}", manifest.len(), clips.len(), a.out.display());
    Ok(())
}
