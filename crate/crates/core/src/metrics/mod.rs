//! Saliency evaluation: S-measure, F-measure and MAE with per-dataset
//! reports and cross-dataset averages.

mod measures;

pub use measures::{centroid, f_beta, f_curve, f_measure, mae, s_measure, s_object, s_region, threshold, FMode, BETA_SQUARED, S_ALPHA, THRESHOLDS};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::media::{load_mask, SaliencyMap};
use crate::pairs::{find_mask, list_images};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub name: String,
    pub s_measure: f64,
    /// `None` when the ground truth has no foreground.
    pub max_f: Option<f64>,
    pub mean_f: Option<f64>,
    pub mae: f64,
    /// No prediction was found; scored as S = F = 0 and MAE = 1.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub s_measure: f64,
    /// Max-over-thresholds F, the headline score.
    pub f_measure: f64,
    pub mean_f_measure: f64,
    pub mae: f64,
    pub per_frame: Vec<FrameMetrics>,
    pub missing: Vec<String>,
}

/// Scores one frame. A `None` prediction gets the worst possible scores.
pub fn evaluate_frame(name: &str, pred: Option<&SaliencyMap>, gt: &SaliencyMap) -> Result<FrameMetrics> {
    let has_fg = gt.foreground_count() > 0;
    let Some(pred) = pred else {
        return Ok(FrameMetrics {
            name: name.to_string(),
            s_measure: 0.0,
            max_f: has_fg.then_some(0.0),
            mean_f: has_fg.then_some(0.0),
            mae: 1.0,
            missing: true,
        });
    };
    let (max_f, mean_f) = if has_fg {
        let curve = f_curve(pred, gt)?;
        (Some(curve.iter().cloned().fold(0.0, f64::max)), Some(curve.iter().sum::<f64>() / curve.len() as f64))
    } else {
        (None, None)
    };
    Ok(FrameMetrics {
        name: name.to_string(),
        s_measure: s_measure(pred, gt, S_ALPHA)?,
        max_f,
        mean_f,
        mae: mae(pred, gt)?,
        missing: false,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Uniform average over frames. F averages only frames with foreground.
pub fn report_from_frames(dataset: &str, mut per_frame: Vec<FrameMetrics>) -> MetricReport {
    per_frame.sort_by(|a, b| a.name.cmp(&b.name));
    MetricReport {
        dataset: dataset.to_string(),
        s_measure: mean(per_frame.iter().map(|f| f.s_measure)),
        f_measure: mean(per_frame.iter().filter_map(|f| f.max_f)),
        mean_f_measure: mean(per_frame.iter().filter_map(|f| f.mean_f)),
        mae: mean(per_frame.iter().map(|f| f.mae)),
        missing: per_frame.iter().filter(|f| f.missing).map(|f| f.name.clone()).collect(),
        per_frame,
    }
}

/// Scores in-memory `(name, prediction, ground truth)` triples.
pub fn evaluate_maps(dataset: &str, frames: &[(String, Option<SaliencyMap>, SaliencyMap)]) -> Result<MetricReport> {
    let per_frame = frames
        .par_iter()
        .map(|(name, pred, gt)| evaluate_frame(name, pred.as_ref(), gt))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_frames(dataset, per_frame))
}

/// Matches predictions to ground-truth masks by file stem. Frames without
/// a prediction are listed in the report and scored worst-case.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, dataset: &str) -> Result<MetricReport> {
    let gts = list_images(gt_dir)?;
    let per_frame = gts
        .par_iter()
        .map(|gt_path| {
            let name = gt_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let gt = load_mask(gt_path, Some(0.5))?;
            let pred = match find_mask(pred_dir, gt_path) {
                Some(p) => Some(load_mask(p, None)?),
                None => {
                    log::warn!("{dataset}: no prediction for {name}");
                    None
                }
            };
            evaluate_frame(&name, pred.as_ref(), &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_frames(dataset, per_frame))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_measure: f64,
    pub f_measure: f64,
    pub mean_f_measure: f64,
    pub mae: f64,
}

impl From<&MetricReport> for Scores {
    fn from(r: &MetricReport) -> Self {
        Self {
            s_measure: r.s_measure,
            f_measure: r.f_measure,
            mean_f_measure: r.mean_f_measure,
            mae: r.mae,
        }
    }
}

/// Unweighted mean of per-dataset scores, whatever their frame counts.
pub fn average_scores(scores: &[Scores]) -> Scores {
    Scores {
        s_measure: mean(scores.iter().map(|s| s.s_measure)),
        f_measure: mean(scores.iter().map(|s| s.f_measure)),
        mean_f_measure: mean(scores.iter().map(|s| s.mean_f_measure)),
        mae: mean(scores.iter().map(|s| s.mae)),
    }
}

pub fn average_reports(reports: &[MetricReport]) -> Scores {
    average_scores(&reports.iter().map(Scores::from).collect::<Vec<_>>())
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Aligned text table in percent with one decimal; adds an average row
/// when there is more than one dataset.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut rows: Vec<(String, Scores)> = reports.iter().map(|r| (r.dataset.clone(), Scores::from(r))).collect();
    if reports.len() > 1 {
        rows.push(("Average".into(), average_reports(reports)));
    }
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Dataset".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", "Dataset", "S", "maxF", "meanF", "M");
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
            name,
            pct(s.s_measure),
            pct(s.f_measure),
            pct(s.mean_f_measure),
            format!("{:.3}", s.mae)
        );
    }
    out
}

/// One JSON record per frame, then one per dataset, then the average.
pub fn render_jsonl(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for f in &r.per_frame {
            let mut v = serde_json::to_value(f).expect("frame serializes");
            v["kind"] = "frame".into();
            v["dataset"] = r.dataset.clone().into();
            let _ = writeln!(out, "{v}");
        }
        let mut v = serde_json::to_value(Scores::from(r)).expect("scores serialize");
        v["kind"] = "dataset".into();
        v["dataset"] = r.dataset.clone().into();
        v["frames"] = r.per_frame.len().into();
        v["missing"] = serde_json::to_value(&r.missing).expect("names serialize");
        let _ = writeln!(out, "{v}");
    }
    let mut v = serde_json::to_value(average_reports(reports)).expect("scores serialize");
    v["kind"] = "average".into();
    v["datasets"] = reports.len().into();
    let _ = writeln!(out, "{v}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::save_mask;
    use ndarray::Array2;

    fn disc(r: f32) -> SaliencyMap {
        SaliencyMap::from_fn(16, 16, |(y, x)| ((y as f32 - 8.0).hypot(x as f32 - 7.0) <= r) as u8 as f32).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let frames: Vec<_> = [3.0, 4.0, 5.0].iter().enumerate().map(|(i, &r)| (format!("f{i}"), Some(disc(r)), disc(r))).collect();
        let r = evaluate_maps("toy", &frames).unwrap();
        assert!((r.s_measure - 1.0).abs() < 1e-6);
        assert!((r.f_measure - 1.0).abs() < 1e-12);
        assert_eq!(r.mae, 0.0);
        assert!(r.missing.is_empty());
    }

    #[test]
    fn dataset_mean_is_frame_mean() {
        let gt = SaliencyMap::zeros(10, 10);
        let frames: Vec<_> = [0.1f32, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("f{i}"), Some(SaliencyMap::new(Array2::from_elem((10, 10), v)).unwrap()), gt.clone()))
            .collect();
        let r = evaluate_maps("toy", &frames).unwrap();
        assert!((r.mae - 0.2).abs() < 1e-7);
    }

    #[test]
    fn average_of_dataset_means() {
        let scores: Vec<Scores> = [0.945, 0.926, 0.803, 0.962]
            .iter()
            .map(|&s| Scores {
                s_measure: s,
                f_measure: 0.0,
                mean_f_measure: 0.0,
                mae: 0.0,
            })
            .collect();
        let avg = average_scores(&scores);
        assert_eq!(format!("{:.1}", avg.s_measure * 100.0), "90.9");
    }

    #[test]
    fn directory_evaluation_flags_missing() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
        for name in ["a", "b", "c"] {
            save_mask(&disc(4.0), gt.join(format!("{name}.png"))).unwrap();
        }
        save_mask(&disc(4.0), pred.join("a.png")).unwrap();
        save_mask(&disc(4.0), pred.join("c.png")).unwrap();
        let r = evaluate_dataset(&pred, &gt, "toy").unwrap();
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert_eq!(r.per_frame.len(), 3);
        assert!((r.mae - 1.0 / 3.0).abs() < 1e-9);
        assert!((r.s_measure - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn table_and_records() {
        let frames = vec![("f0".to_string(), Some(disc(4.0)), disc(4.0))];
        let a = evaluate_maps("alpha", &frames).unwrap();
        let b = evaluate_maps("beta", &[("f0".to_string(), None, disc(4.0))]).unwrap();
        let table = render_table(&[a.clone(), b.clone()]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("100.0"));
        assert!(lines[3].starts_with("Average") && lines[3].contains("50.0"));
        let records: Vec<serde_json::Value> = render_jsonl(&[a, b]).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 5);
        assert_eq!(records[3]["missing"][0], "f0");
        assert_eq!(records[4]["kind"], "average");
    }
}
