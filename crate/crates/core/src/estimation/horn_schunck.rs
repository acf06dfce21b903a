//! Coarse-to-fine Horn–Schunck with intermediate warping.
//!
//! Per pyramid level (coarsest first) and per warp step, the second image is
//! pulled back along the current flow and the linearized brightness-constancy
//! plus smoothness energy is relaxed with Jacobi iterations. The smoothness
//! term uses lagged Charbonnier weights so that flow discontinuities at object
//! boundaries stay sharp. A 3x3 median filter follows each warp step. Flow is
//! upsampled and rescaled between levels.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::FlowEstimator;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::media::{resize_plane, sample_plane, Image, ResizeMode};

/// Smallest side length a pyramid level may have.
const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowEstimatorConfig {
    pub pyramid_levels: usize,
    pub scale_factor: f64,
    /// Jacobi iterations run after each warp step of a level.
    pub iterations_per_level: usize,
    /// Regularization weight `alpha`; the data term is compared against `alpha^2`.
    pub smoothness_weight: f64,
    pub warp_steps_per_level: usize,
    pub median_filter: bool,
    /// Charbonnier scale (px/px) of the edge-preserving smoothness weights;
    /// 0 gives the classic quadratic regularizer.
    pub robust_epsilon: f64,
}

impl Default for FlowEstimatorConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            scale_factor: 0.5,
            iterations_per_level: 50,
            smoothness_weight: 0.1,
            warp_steps_per_level: 2,
            median_filter: true,
            robust_epsilon: 0.02,
        }
    }
}

impl FlowEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::InvalidConfig("scale_factor must be in (0, 1)".into()));
        }
        if self.smoothness_weight.is_nan() || self.smoothness_weight <= 0.0 {
            return Err(Error::InvalidConfig("smoothness_weight must be > 0".into()));
        }
        if self.robust_epsilon.is_nan() || self.robust_epsilon < 0.0 {
            return Err(Error::InvalidConfig("robust_epsilon must be >= 0".into()));
        }
        if self.warp_steps_per_level < 1 {
            return Err(Error::InvalidConfig("warp_steps_per_level must be >= 1".into()));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with replicated borders.
fn blur(src: &Array2<f32>, sigma: f32) -> Array2<f32> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = src.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let horizontal = Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &g)| g * src[[y, clamp(x as isize + k as isize - radius, w)]])
            .sum::<f32>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &g)| g * horizontal[[clamp(y as isize + k as isize - radius, h), x]])
            .sum::<f32>()
    })
}

fn pyramid(gray: Array2<f32>, config: &FlowEstimatorConfig) -> Vec<Array2<f32>> {
    let s = config.scale_factor as f32;
    let sigma = 0.5 * (1.0 / (s * s) - 1.0).sqrt();
    let mut levels = vec![gray];
    while levels.len() < config.pyramid_levels {
        let prev = levels.last().unwrap();
        let (h, w) = prev.dim();
        let nh = (h as f32 * s).round() as usize;
        let nw = (w as f32 * s).round() as usize;
        if nh < MIN_LEVEL_SIDE || nw < MIN_LEVEL_SIDE {
            break;
        }
        let smoothed = blur(prev, sigma);
        levels.push(resize_plane(&smoothed.view(), nh, nw, ResizeMode::Bilinear));
    }
    levels
}

/// Central differences with replicated borders.
fn gradients(img: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let l = img[[y, x.saturating_sub(1)]];
        let r = img[[y, (x + 1).min(w - 1)]];
        0.5 * (r - l)
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let t = img[[y.saturating_sub(1), x]];
        let b = img[[(y + 1).min(h - 1), x]];
        0.5 * (b - t)
    });
    (gx, gy)
}

fn median3x3(f: &Array2<f32>) -> Array2<f32> {
    let (h, w) = f.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut window = [0.0f32; 9];
        let mut k = 0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                window[k] = f[[yy, xx]];
                k += 1;
            }
        }
        window.sort_by(f32::total_cmp);
        window[4]
    })
}

fn warp_back(img: &Array2<f32>, u: &Array2<f32>, v: &Array2<f32>) -> Array2<f32> {
    let view = img.view();
    Array2::from_shape_fn(img.dim(), |(y, x)| {
        sample_plane(&view, x as f32 + u[[y, x]], y as f32 + v[[y, x]])
    })
}

/// Charbonnier diffusivity scaled to 1 on flat flow: `eps / sqrt(|grad|^2 + eps^2)`.
fn diffusivity(u: &Array2<f32>, v: &Array2<f32>, eps: f32) -> Array2<f32> {
    let (ux, uy) = gradients(u);
    let (vx, vy) = gradients(v);
    Zip::from(&ux)
        .and(&uy)
        .and(&vx)
        .and(&vy)
        .map_collect(|&a, &b, &c, &d| eps / (a * a + b * b + c * c + d * d + eps * eps).sqrt())
}

/// 8-neighbourhood offsets with the Horn–Schunck averaging weights.
const NEIGHBOURS: [(isize, isize, f32); 8] = [
    (-1, 0, 1.0 / 6.0),
    (1, 0, 1.0 / 6.0),
    (0, -1, 1.0 / 6.0),
    (0, 1, 1.0 / 6.0),
    (-1, -1, 1.0 / 12.0),
    (-1, 1, 1.0 / 12.0),
    (1, -1, 1.0 / 12.0),
    (1, 1, 1.0 / 12.0),
];

/// Weighted neighbourhood sums `(sum w, sum w u, sum w v)` per pixel, with
/// pairwise weights `0.5 (g_p + g_q)` times the averaging kernel.
fn weighted_sums(u: &Array2<f32>, v: &Array2<f32>, g: Option<&Array2<f32>>) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
    let (h, w) = u.dim();
    let mut sw = Array2::<f32>::zeros((h, w));
    let mut su = Array2::<f32>::zeros((h, w));
    let mut sv = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for &(dy, dx, k) in &NEIGHBOURS {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let wt = match g {
                    Some(g) => k * 0.5 * (g[[y, x]] + g[[yy, xx]]),
                    None => k,
                };
                a += wt;
                b += wt * u[[yy, xx]];
                c += wt * v[[yy, xx]];
            }
            sw[[y, x]] = a;
            su[[y, x]] = b;
            sv[[y, x]] = c;
        }
    }
    (sw, su, sv)
}

/// Iterations between diffusivity refreshes.
const DIFFUSIVITY_LAG: usize = 5;

fn refine_level(
    a: &Array2<f32>,
    b: &Array2<f32>,
    u: &mut Array2<f32>,
    v: &mut Array2<f32>,
    config: &FlowEstimatorConfig,
) {
    let alpha2 = (config.smoothness_weight * config.smoothness_weight) as f32;
    let eps = config.robust_epsilon as f32;
    let (ax, ay) = gradients(a);
    for _ in 0..config.warp_steps_per_level {
        let bw = warp_back(b, u, v);
        let (bx, by) = gradients(&bw);
        let ix = (&ax + &bx) * 0.5;
        let iy = (&ay + &by) * 0.5;
        // residual of the linearization at the current flow
        let c = Array2::from_shape_fn(a.dim(), |p| bw[p] - a[p] - ix[p] * u[p] - iy[p] * v[p]);
        let mut g = None;
        for it in 0..config.iterations_per_level {
            if eps > 0.0 && it % DIFFUSIVITY_LAG == 0 {
                g = Some(diffusivity(u, v, eps));
            }
            let (sw, su, sv) = weighted_sums(u, v, g.as_ref());
            let w = u.ncols();
            for (i, (uu, vv)) in u.iter_mut().zip(v.iter_mut()).enumerate() {
                let p = (i / w, i % w);
                let (gx, gy, c) = (ix[p], iy[p], c[p]);
                // [[gx^2 + d, gx gy], [gx gy, gy^2 + d]] [u v]^T = [a su - gx c, a sv - gy c]^T
                let d = alpha2 * sw[p];
                let (r1, r2) = (alpha2 * su[p] - gx * c, alpha2 * sv[p] - gy * c);
                let det = d * (gx * gx + gy * gy + d);
                *uu = ((gy * gy + d) * r1 - gx * gy * r2) / det;
                *vv = ((gx * gx + d) * r2 - gx * gy * r1) / det;
            }
        }
        if config.median_filter {
            *u = median3x3(u);
            *v = median3x3(v);
        }
    }
}

/// Forward flow `a -> b` on `a`'s grid.
pub fn estimate_flow(a: &Image, b: &Image, config: &FlowEstimatorConfig) -> Result<FlowField> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    config.validate()?;
    let pa = pyramid(a.to_gray(), config);
    let pb = pyramid(b.to_gray(), config);
    let coarsest = pa.len() - 1;
    let mut u = Array2::<f32>::zeros(pa[coarsest].dim());
    let mut v = Array2::<f32>::zeros(pa[coarsest].dim());
    for level in (0..=coarsest).rev() {
        let (h, w) = pa[level].dim();
        if u.dim() != (h, w) {
            let sx = w as f32 / u.ncols() as f32;
            let sy = h as f32 / u.nrows() as f32;
            u = resize_plane(&u.view(), h, w, ResizeMode::Bilinear) * sx;
            v = resize_plane(&v.view(), h, w, ResizeMode::Bilinear) * sy;
        }
        refine_level(&pa[level], &pb[level], &mut u, &mut v, config);
    }
    FlowField::new(u, v)
}

/// The built-in estimator as a [`FlowEstimator`].
#[derive(Debug, Clone, Default)]
pub struct HornSchunck {
    pub config: FlowEstimatorConfig,
}

impl FlowEstimator for HornSchunck {
    fn id(&self) -> String {
        "builtin-horn-schunck".into()
    }

    fn estimate(&self, a: &Image, b: &Image) -> Result<FlowField> {
        estimate_flow(a, b, &self.config)
    }
}
