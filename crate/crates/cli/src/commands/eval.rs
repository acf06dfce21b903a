use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use simflow_core::metrics::{evaluate_frame, render_jsonl, render_table, report_from_frames, FrameMetrics};
use simflow_core::pairs::{find_mask, list_images};
use simflow_core::{load_checkpoint, load_image, load_mask, read_flo, resize, save_mask, ResizeMode, SaliencyMap, SegNet};

use super::require_dir;
use crate::{effective_config, with_workers, EvalArgs};

pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_RECORDS: &str = "report.jsonl";

/// Runs the network at its input size and resizes the map back to the frame.
pub fn predict(net: &SegNet, frame: &Path, flow: &Path) -> Result<SaliencyMap> {
    let image = load_image(frame)?;
    let flow = read_flo(flow)?;
    if flow.dims() != image.dims() {
        bail!("flow {:?} does not match frame {:?}", flow.dims(), image.dims());
    }
    let (h, w) = net.config().input_size;
    let (fh, fw) = image.dims();
    let pred = net.forward(&resize(&image, h, w, ResizeMode::Bilinear)?, &flow.resize(h, w)?)?;
    Ok(simflow_core::media::resize_map(&pred.to_saliency(), fh, fw, ResizeMode::Bilinear)?)
}

pub fn run(a: &EvalArgs) -> Result<()> {
    let config = effective_config(&a.common)?.resolve();
    config.validate()?;
    require_dir(&a.gt, "ground-truth")?;
    require_dir(&a.frames, "frames")?;
    require_dir(&a.flows, "flows")?;
    let net = match (&a.checkpoint, a.oracle) {
        (_, true) => None,
        (Some(p), false) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        (None, false) => bail!("--checkpoint is required unless --oracle is set"),
    };
    let gts = list_images(&a.gt)?;
    if gts.is_empty() {
        bail!("no ground-truth masks in {}", a.gt.display());
    }

    let per_frame = with_workers(config.workers, || {
        gts.par_iter()
            .map(|gt_path| -> Result<FrameMetrics> {
                let name = gt_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let gt = load_mask(gt_path, Some(0.5))?;
                let pred = match &net {
                    None => Some(gt.clone()),
                    Some(net) => {
                        let frame = find_mask(&a.frames, gt_path);
                        let flow = a.flows.join(format!("{name}.flo"));
                        match frame {
                            Some(frame) if flow.is_file() => Some(predict(net, &frame, &flow)?),
                            Some(_) => {
                                eprintln!("warning: no flow for {name}; frame scored as missing");
                                None
                            }
                            None => {
                                eprintln!("warning: no frame for {name}; frame scored as missing");
                                None
                            }
                        }
                    }
                };
                if let (Some(dir), Some(p)) = (&a.predictions, &pred) {
                    save_mask(p, dir.join(format!("{name}.png")))?;
                }
                let mut m = evaluate_frame(&name, pred.as_ref(), &gt)?;
                m.s_measure = match &pred {
                    Some(p) => simflow_core::s_measure(p, &gt, config.metrics.s_alpha)?,
                    None => 0.0,
                };
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let report = report_from_frames(&a.dataset, per_frame);
    let table = render_table(std::slice::from_ref(&report));
    let header = json!({
        "kind": "config",
        "created_with": {"command": "eval", "config": config.to_json(), "oracle": a.oracle, "checkpoint": a.checkpoint},
    });
    std::fs::create_dir_all(&a.report).with_context(|| format!("creating {}", a.report.display()))?;
    std::fs::write(a.report.join(REPORT_TABLE), &table)?;
    std::fs::write(a.report.join(REPORT_RECORDS), format!("{header}\n{}", render_jsonl(std::slice::from_ref(&report))))?;
    print!("{table}");
    if !report.missing.is_empty() {
        eprintln!("warning: {} of {} frames had no prediction", report.missing.len(), report.per_frame.len());
    }
    Ok(())
}
