//! Affine + thin-plate-spline warps: the classic still-image-to-video baseline.
//!
//! The forward map is `W(p) = c + s R (p - c) + T + d(p)` where `c` is the
//! image center and `d` is a thin-plate spline interpolating random
//! control-point displacements. Frame `t` applies `W` compounded `t` times;
//! its analytic flow is `W^t(p) - p` and its pixels are pulled from the
//! source through the numerically inverted map.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameGenerator, FrameSequence, GenerationConfig, Generated};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::media::{sample_rgb, Image, SaliencyMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Fractions of `(width, height)`.
    pub translation: (f64, f64),
    pub tps_grid: usize,
    /// Control-point jitter as a fraction of the image dimensions.
    pub tps_jitter: f64,
    pub seed: u64,
}

impl WarpParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: (0.0, 0.0),
            tps_grid: 5,
            tps_jitter: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::DegenerateWarp(format!("scale {} is not positive", self.scale)));
        }
        if self.tps_grid < 3 {
            return Err(Error::InvalidConfig("tps_grid must be >= 3".into()));
        }
        if self.tps_jitter.is_nan() || self.tps_jitter < 0.0 {
            return Err(Error::InvalidConfig("tps_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ranges random warps are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpRanges {
    pub max_rotation_deg: f64,
    pub max_scale_delta: f64,
    pub max_translation: f64,
    pub tps_grid: usize,
    pub tps_jitter: f64,
}

impl Default for WarpRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_scale_delta: 0.05,
            max_translation: 0.05,
            tps_grid: 5,
            tps_jitter: 0.02,
        }
    }
}

impl WarpRanges {
    pub fn sample(&self, seed: u64) -> WarpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        WarpParams {
            rotation_deg: sym(self.max_rotation_deg),
            scale: 1.0 + sym(self.max_scale_delta),
            translation: (sym(self.max_translation), sym(self.max_translation)),
            tps_grid: self.tps_grid,
            tps_jitter: self.tps_jitter,
            seed: seed.wrapping_add(0x9e37_79b9),
        }
    }
}

/// Thin-plate spline interpolating 2D displacements at control points.
#[derive(Debug, Clone)]
struct ThinPlateSpline {
    /// Control points in normalized coordinates.
    points: Vec<(f64, f64)>,
    weights_x: Vec<f64>,
    weights_y: Vec<f64>,
    affine_x: [f64; 3],
    affine_y: [f64; 3],
    norm: f64,
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

impl ThinPlateSpline {
    fn fit(points: &[(f64, f64)], disp: &[(f64, f64)], norm: f64) -> Result<Self> {
        let n = points.len();
        let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x / norm, y / norm)).collect();
        let m = n + 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                a[(i, j)] = tps_kernel(dx * dx + dy * dy);
            }
            let row = [1.0, pts[i].0, pts[i].1];
            for (k, &v) in row.iter().enumerate() {
                a[(i, n + k)] = v;
                a[(n + k, i)] = v;
            }
        }
        let lu = a.lu();
        let solve = |rhs: DVector<f64>| {
            lu.solve(&rhs)
                .ok_or_else(|| Error::DegenerateWarp("singular thin-plate system".into()))
        };
        let mut bx = DVector::zeros(m);
        let mut by = DVector::zeros(m);
        for i in 0..n {
            bx[i] = disp[i].0;
            by[i] = disp[i].1;
        }
        let sx = solve(bx)?;
        let sy = solve(by)?;
        Ok(Self {
            points: pts,
            weights_x: sx.rows(0, n).iter().cloned().collect(),
            weights_y: sy.rows(0, n).iter().cloned().collect(),
            affine_x: [sx[n], sx[n + 1], sx[n + 2]],
            affine_y: [sy[n], sy[n + 1], sy[n + 2]],
            norm,
        })
    }

    fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let (x, y) = (x / self.norm, y / self.norm);
        let mut dx = self.affine_x[0] + self.affine_x[1] * x + self.affine_x[2] * y;
        let mut dy = self.affine_y[0] + self.affine_y[1] * x + self.affine_y[2] * y;
        for (i, &(px, py)) in self.points.iter().enumerate() {
            let k = tps_kernel((x - px).powi(2) + (y - py).powi(2));
            dx += self.weights_x[i] * k;
            dy += self.weights_y[i] * k;
        }
        (dx, dy)
    }
}

/// One invertible affine + TPS warp on an `h x w` grid.
#[derive(Debug, Clone)]
pub struct SpatialWarp {
    center: (f64, f64),
    linear: [[f64; 2]; 2],
    inverse_linear: [[f64; 2]; 2],
    shift: (f64, f64),
    spline: Option<ThinPlateSpline>,
}

impl SpatialWarp {
    pub fn new(params: &WarpParams, height: usize, width: usize) -> Result<Self> {
        params.validate()?;
        let theta = params.rotation_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let k = params.scale;
        let linear = [[k * c, -k * s], [k * s, k * c]];
        let det = linear[0][0] * linear[1][1] - linear[0][1] * linear[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateWarp(format!("affine determinant {det}")));
        }
        let inverse_linear = [
            [linear[1][1] / det, -linear[0][1] / det],
            [-linear[1][0] / det, linear[0][0] / det],
        ];
        let spline = if params.tps_jitter > 0.0 {
            let g = params.tps_grid;
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let (wf, hf) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
            let mut points = Vec::with_capacity(g * g);
            let mut disp = Vec::with_capacity(g * g);
            for gy in 0..g {
                for gx in 0..g {
                    points.push((gx as f64 * wf / (g - 1) as f64, gy as f64 * hf / (g - 1) as f64));
                    let jx = params.tps_jitter * width as f64;
                    let jy = params.tps_jitter * height as f64;
                    disp.push((rng.random_range(-jx..=jx), rng.random_range(-jy..=jy)));
                }
            }
            Some(ThinPlateSpline::fit(&points, &disp, wf.max(hf))?)
        } else {
            None
        };
        Ok(Self {
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            linear,
            inverse_linear,
            shift: (params.translation.0 * width as f64, params.translation.1 * height as f64),
            spline,
        })
    }

    fn spline_at(&self, x: f64, y: f64) -> (f64, f64) {
        self.spline.as_ref().map_or((0.0, 0.0), |s| s.displacement(x, y))
    }

    /// Where source pixel `(x, y)` lands.
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.center;
        let (dx, dy) = (x - cx, y - cy);
        let l = &self.linear;
        let (sx, sy) = self.spline_at(x, y);
        (
            cx + l[0][0] * dx + l[0][1] * dy + self.shift.0 + sx,
            cy + l[1][0] * dx + l[1][1] * dy + self.shift.1 + sy,
        )
    }

    /// The source position that lands on `(qx, qy)`, by fixed-point iteration.
    pub fn inverse(&self, qx: f64, qy: f64) -> Result<(f64, f64)> {
        let (cx, cy) = self.center;
        let li = &self.inverse_linear;
        let mut p = (qx, qy);
        for _ in 0..100 {
            let (sx, sy) = self.spline_at(p.0, p.1);
            let rx = qx - cx - self.shift.0 - sx;
            let ry = qy - cy - self.shift.1 - sy;
            let next = (cx + li[0][0] * rx + li[0][1] * ry, cy + li[1][0] * rx + li[1][1] * ry);
            let step = (next.0 - p.0).abs() + (next.1 - p.1).abs();
            p = next;
            if step < 1e-9 {
                return Ok(p);
            }
        }
        let (fx, fy) = self.forward(p.0, p.1);
        if (fx - qx).abs() + (fy - qy).abs() < 1e-4 {
            Ok(p)
        } else {
            Err(Error::DegenerateWarp(format!("warp is not invertible near ({qx:.1}, {qy:.1})")))
        }
    }
}

/// Frames `1..=T` of the compounded warp and their analytic forward flows.
pub fn generate_spatial_warp(source: &Image, params: &WarpParams, frames: usize) -> Result<(FrameSequence, Vec<FlowField>)> {
    let (h, w) = source.dims();
    let warp = SpatialWarp::new(params, h, w)?;
    let n = h * w;
    let grid: Vec<(f64, f64)> = (0..n).map(|i| ((i % w) as f64, (i / w) as f64)).collect();
    // forward positions W^t(p) and pull-back positions W^-t(q), advanced one frame at a time
    let mut fwd = grid.clone();
    let mut back = grid.clone();
    let mut images = Vec::with_capacity(frames);
    let mut flows = Vec::with_capacity(frames);
    for _ in 0..frames {
        for p in fwd.iter_mut() {
            *p = warp.forward(p.0, p.1);
        }
        for q in back.iter_mut() {
            *q = warp.inverse(q.0, q.1)?;
        }
        flows.push(FlowField::from_fn(h, w, |y, x| {
            let (fx, fy) = fwd[y * w + x];
            ((fx - x as f64) as f32, (fy - y as f64) as f32)
        })?);
        let samples: Vec<[f32; 3]> = back.iter().map(|&(x, y)| sample_rgb(source, x as f32, y as f32)).collect();
        images.push(Image::from_fn(h, w, |y, x, c| samples[y * w + x][c]));
    }
    let sequence = FrameSequence {
        source: source.clone(),
        frames: images,
        generator_id: "spatial-warp".into(),
        config: GenerationConfig::local(source, frames, params.seed),
    };
    Ok((sequence, flows))
}

/// Draws a random warp per source from [`WarpRanges`].
#[derive(Debug, Clone, Default)]
pub struct SpatialWarpGenerator {
    pub ranges: WarpRanges,
}

impl FrameGenerator for SpatialWarpGenerator {
    fn id(&self) -> String {
        "spatial-warp".into()
    }

    fn generate(&self, source: &Image, _mask: &SaliencyMap, frames: usize, seed: u64, _id: &str) -> Result<Generated> {
        let params = self.ranges.sample(seed);
        let (sequence, flows) = generate_spatial_warp(source, &params, frames)?;
        Ok(Generated {
            sequence,
            analytic_flows: Some(flows),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::sample_rgb;

    fn texture(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.2 * (0.31 * x + 0.17 * y + c as f32).sin() + 0.2 * (0.11 * x - 0.23 * y + 2.0 * c as f32).cos()
        })
    }

    #[test]
    fn identity_warp_is_identity() {
        let img = texture(24, 30);
        let (seq, flows) = generate_spatial_warp(&img, &WarpParams::identity(), 2).unwrap();
        for (f, flow) in seq.frames.iter().zip(&flows) {
            assert!(f.mean_abs_diff(&img).unwrap() < 1e-6);
            assert!(flow.u().iter().chain(flow.v().iter()).all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn pure_translation_flow() {
        let img = texture(40, 100);
        let params = WarpParams {
            translation: (0.05, 0.0),
            ..WarpParams::identity()
        };
        let (_, flows) = generate_spatial_warp(&img, &params, 2).unwrap();
        assert!(flows[0].u().iter().all(|&u| (u - 5.0).abs() < 1e-4));
        assert!(flows[0].v().iter().all(|&v| v.abs() < 1e-4));
        // compounded
        assert!(flows[1].u().iter().all(|&u| (u - 10.0).abs() < 1e-4));
    }

    #[test]
    fn pure_rotation_flow_magnitude() {
        let (h, w) = (41, 61);
        let img = texture(h, w);
        let theta: f64 = 7.0;
        let params = WarpParams {
            rotation_deg: theta,
            ..WarpParams::identity()
        };
        let (_, flows) = generate_spatial_warp(&img, &params, 1).unwrap();
        let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        let mag = flows[0].magnitude();
        for y in 0..h {
            for x in 0..w {
                let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let expected = 2.0 * (theta.to_radians() / 2.0).sin() * dist;
                assert!((mag[[y, x]] as f64 - expected).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn tps_warp_round_trips_and_reconstructs() {
        let (h, w) = (64, 80);
        let img = texture(h, w);
        let params = WarpParams {
            rotation_deg: 4.0,
            scale: 1.03,
            translation: (0.02, -0.01),
            tps_grid: 5,
            tps_jitter: 0.02,
            seed: 11,
        };
        let warp = SpatialWarp::new(&params, h, w).unwrap();
        for &(x, y) in &[(3.0, 4.0), (40.0, 30.0), (70.5, 60.25)] {
            let (fx, fy) = warp.forward(x, y);
            let (bx, by) = warp.inverse(fx, fy).unwrap();
            assert!((bx - x).abs() < 1e-6 && (by - y).abs() < 1e-6);
        }
        let (seq, flows) = generate_spatial_warp(&img, &params, 3).unwrap();
        for (frame, flow) in seq.frames.iter().zip(&flows) {
            // pulling frame t back along the flow reconstructs the source
            let mut err = 0.0;
            let mut n = 0;
            for y in 4..h - 4 {
                for x in 4..w - 4 {
                    let (u, v) = flow.at(y, x);
                    let (tx, ty) = (x as f32 + u, y as f32 + v);
                    if tx < 1.0 || ty < 1.0 || tx > (w - 2) as f32 || ty > (h - 2) as f32 {
                        continue;
                    }
                    let s = sample_rgb(frame, tx, ty);
                    for (c, sc) in s.iter().enumerate() {
                        err += (sc - img.get(y, x, c)).abs() as f64;
                    }
                    n += 3;
                }
            }
            assert!(err / (n as f64) < 0.05, "reconstruction error {}", err / n as f64);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let img = texture(32, 32);
        let gen = SpatialWarpGenerator::default();
        let mask = SaliencyMap::zeros(32, 32);
        let a = gen.generate(&img, &mask, 2, 5, "a").unwrap();
        let b = gen.generate(&img, &mask, 2, 5, "b").unwrap();
        assert_eq!(a.sequence.frames, b.sequence.frames);
        assert_eq!(a.analytic_flows, b.analytic_flows);
    }

    #[test]
    fn degenerate_scale_rejected() {
        let params = WarpParams {
            scale: 0.0,
            ..WarpParams::identity()
        };
        assert!(matches!(SpatialWarp::new(&params, 10, 10), Err(Error::DegenerateWarp(_))));
    }
}
