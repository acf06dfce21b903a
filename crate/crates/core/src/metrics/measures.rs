use ndarray::{s, ArrayView2};

use crate::error::{Error, Result};
use crate::media::SaliencyMap;

pub const BETA_SQUARED: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
pub const THRESHOLDS: usize = 255;
const EPS: f64 = f64::EPSILON;

fn check(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    Ok(())
}

/// Mean absolute difference over all pixels.
pub fn mae(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check(pred, gt)?;
    let n = pred.values().len().max(1) as f64;
    let sum: f64 = pred.values().iter().zip(gt.values().iter()).map(|(&p, &g)| (p as f64 - g as f64).abs()).sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FMode {
    /// Best score over the threshold grid.
    Max,
    /// Average score over the threshold grid.
    Mean,
    Fixed(f64),
}

/// The `k`-th of [`THRESHOLDS`] uniform thresholds in `(0, 1)`.
pub fn threshold(k: usize) -> f64 {
    (k + 1) as f64 / (THRESHOLDS + 1) as f64
}

/// Weighted harmonic mean of precision and recall; 0 when both vanish.
pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA_SQUARED * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQUARED) * precision * recall / den
    }
}

/// Scores at every grid threshold; `pred >= tau` counts as foreground.
pub fn f_curve(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<Vec<f64>> {
    check(pred, gt)?;
    let positives = gt.values().iter().filter(|&&g| g > 0.5).count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    // Histogram predictions by the number of grid thresholds they clear.
    let mut hit = vec![0usize; THRESHOLDS + 1];
    let mut all = vec![0usize; THRESHOLDS + 1];
    for (&p, &g) in pred.values().iter().zip(gt.values().iter()) {
        let cleared = cleared_thresholds(p as f64);
        all[cleared] += 1;
        if g > 0.5 {
            hit[cleared] += 1;
        }
    }
    let mut curve = vec![0.0; THRESHOLDS];
    let (mut tp, mut predicted) = (0usize, 0usize);
    for k in (0..THRESHOLDS).rev() {
        tp += hit[k + 1];
        predicted += all[k + 1];
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        curve[k] = f_beta(precision, tp as f64 / positives as f64);
    }
    Ok(curve)
}

/// Number of grid thresholds `tau_k` with `p >= tau_k`.
fn cleared_thresholds(p: f64) -> usize {
    let mut k = ((p * (THRESHOLDS + 1) as f64).floor().max(0.0) as usize).min(THRESHOLDS);
    while k > 0 && p < threshold(k - 1) {
        k -= 1;
    }
    while k < THRESHOLDS && p >= threshold(k) {
        k += 1;
    }
    k
}

pub fn f_measure(pred: &SaliencyMap, gt: &SaliencyMap, mode: FMode) -> Result<f64> {
    match mode {
        FMode::Max => Ok(f_curve(pred, gt)?.into_iter().fold(0.0, f64::max)),
        FMode::Mean => {
            let c = f_curve(pred, gt)?;
            Ok(c.iter().sum::<f64>() / c.len() as f64)
        }
        FMode::Fixed(tau) => {
            check(pred, gt)?;
            let (mut tp, mut predicted, mut positives) = (0usize, 0usize, 0usize);
            for (&p, &g) in pred.values().iter().zip(gt.values().iter()) {
                let fg = g > 0.5;
                positives += fg as usize;
                if p as f64 >= tau {
                    predicted += 1;
                    tp += fg as usize;
                }
            }
            if positives == 0 {
                return Err(Error::EmptyGroundTruth);
            }
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            Ok(f_beta(precision, tp as f64 / positives as f64))
        }
    }
}

/// Structure measure `alpha * S_o + (1 - alpha) * S_r`, clamped to `[0, 1]`.
pub fn s_measure(pred: &SaliencyMap, gt: &SaliencyMap, alpha: f64) -> Result<f64> {
    check(pred, gt)?;
    let p = pred.values().mapv(|v| v as f64);
    let g = gt.values().mapv(|v| v > 0.5);
    let n = p.len().max(1) as f64;
    let fg_fraction = g.iter().filter(|&&b| b).count() as f64 / n;
    let score = if fg_fraction == 0.0 {
        1.0 - p.sum() / n
    } else if fg_fraction == 1.0 {
        p.sum() / n
    } else {
        alpha * s_object(p.view(), g.view(), fg_fraction) + (1.0 - alpha) * s_region(p.view(), g.view())
    };
    Ok(score.clamp(0.0, 1.0))
}

/// Object-aware term: foreground and background similarity weighted by
/// the foreground fraction.
pub fn s_object(p: ArrayView2<'_, f64>, g: ArrayView2<'_, bool>, fg_fraction: f64) -> f64 {
    let fg: Vec<f64> = p.iter().zip(g.iter()).filter(|(_, &b)| b).map(|(&v, _)| v).collect();
    let bg: Vec<f64> = p.iter().zip(g.iter()).filter(|(_, &b)| !b).map(|(&v, _)| 1.0 - v).collect();
    fg_fraction * object_score(&fg) + (1.0 - fg_fraction) * object_score(&bg)
}

fn object_score(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = if x.len() > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

/// Region-aware term: quadrants split at the foreground centroid, each
/// scored by structural similarity and weighted by its share of the area.
pub fn s_region(p: ArrayView2<'_, f64>, g: ArrayView2<'_, bool>) -> f64 {
    let (h, w) = p.dim();
    let (cx, cy) = centroid(g);
    let area = (h * w) as f64;
    let blocks = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    blocks
        .iter()
        .map(|&(y0, y1, x0, x1)| {
            let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
            if weight == 0.0 {
                return 0.0;
            }
            let gb = g.slice(s![y0..y1, x0..x1]).mapv(|b| if b { 1.0 } else { 0.0 });
            weight * ssim(p.slice(s![y0..y1, x0..x1]), gb.view())
        })
        .sum()
}

/// Split point `(x, y)`: the rounded foreground centroid plus one, so the
/// centroid row and column fall in the top-left block.
pub fn centroid(g: ArrayView2<'_, bool>) -> (usize, usize) {
    let (h, w) = g.dim();
    let (mut sy, mut sx, mut count) = (0.0, 0.0, 0usize);
    for ((y, x), &b) in g.indexed_iter() {
        if b {
            sy += y as f64;
            sx += x as f64;
            count += 1;
        }
    }
    if count == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let x = round_half_even(sx / count as f64) as usize + 1;
    let y = round_half_even(sy / count as f64) as usize + 1;
    (x.min(w), y.min(h))
}

fn round_half_even(v: f64) -> f64 {
    let r = v.round();
    if (v - v.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - v.signum()
    } else {
        r
    }
}

fn ssim(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
        cxy += (a - mx) * (b - my);
    }
    let dof = if n > 1.0 { n - 1.0 } else { 1.0 };
    let (vx, vy, cxy) = (vx / dof, vy / dof, cxy / dof);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
