//! Annotated video clips as real training pairs.

use std::path::{Path, PathBuf};

use super::{FlowKind, Provenance, TrainingPair};
use crate::error::{Error, Result};
use crate::estimation::FlowEstimator;
use crate::media::{load_image, load_mask};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// The mask in `masks_dir` sharing `frame`'s stem, any image extension.
pub fn find_mask(masks_dir: &Path, frame: &Path) -> Option<PathBuf> {
    let stem = frame.file_stem()?;
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| masks_dir.join(stem).with_extension(ext))
        .find(|p| p.is_file())
}

/// One pair per annotated frame: frame `k`, mask `k` and the flow from
/// frame `k` to frame `k + 1`. The last frame takes the negated flow to the
/// previous frame. Frames without a mask are skipped.
pub fn ingest_real_video(frames_dir: &Path, masks_dir: &Path, estimator: &dyn FlowEstimator, dataset_name: &str) -> Result<Vec<TrainingPair>> {
    let frames = list_images(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::EmptyDirectory(frames_dir.to_path_buf()));
    }
    let clip = frames_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let n = frames.len();
    let mut pairs = Vec::new();
    for (k, frame_path) in frames.iter().enumerate() {
        let Some(mask_path) = find_mask(masks_dir, frame_path) else {
            log::info!("{}", Error::MissingMask(frame_path.clone()));
            continue;
        };
        if n < 2 {
            log::warn!("{} has a single frame, no flow available", frames_dir.display());
            break;
        }
        let image = load_image(frame_path)?;
        let mask = load_mask(&mask_path, Some(0.5))?;
        let (flow, kind) = if k + 1 < n {
            (estimator.estimate(&image, &load_image(&frames[k + 1])?), FlowKind::Forward)
        } else {
            let back = estimator.estimate(&image, &load_image(&frames[k - 1])?);
            (back.map(|f| f.negated()), FlowKind::NegatedBackward)
        };
        let flow = match flow {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping {}: {e}", frame_path.display());
                continue;
            }
        };
        let stem = frame_path.file_stem().unwrap_or_default().to_string_lossy();
        let pair = TrainingPair {
            image,
            flow,
            mask,
            source_id: format!("{clip}_{stem}"),
            t: k,
            provenance: Provenance::Real(dataset_name.to_string()),
            generator_id: "video".into(),
            flow_backend_id: estimator.id(),
            flow_kind: kind,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}
