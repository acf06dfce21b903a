//! Dense optical flow fields.
//!
//! A [`FlowField`] stores forward displacements anchored on the first
//! frame's grid: pixel `(x, y)` of frame A moves to `(x + u, y + v)` in B.

mod colorize;
mod flo;

pub use colorize::{colorize, wheel_color, WHEEL_SEGMENTS};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{resize_plane, ResizeMode};

/// Magnitudes above this are the Middlebury "unknown flow" sentinel and rejected.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    u: Array2<f32>,
    v: Array2<f32>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                found: v.dim(),
            });
        }
        let (h, w) = u.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidDimensions(format!("empty flow {h}x{w}")));
        }
        for (((row, col), &a), &b) in u.indexed_iter().zip(v.iter()) {
            if !valid(a) || !valid(b) {
                return Err(Error::InvalidFlowValue { row, col });
            }
        }
        Ok(Self { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
        }
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        Self {
            u: Array2::from_elem((height, width), u),
            v: Array2::from_elem((height, width), v),
        }
    }

    /// Builds a field from a closure returning `(u, v)` at `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let mut u = Array2::zeros((height, width));
        let mut v = Array2::zeros((height, width));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u[[y, x]] = a;
                v[[y, x]] = b;
            }
        }
        Self::new(u, v)
    }

    pub fn u(&self) -> &Array2<f32> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f32> {
        &self.v
    }

    pub fn height(&self) -> usize {
        self.u.nrows()
    }

    pub fn width(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        (self.u[[y, x]], self.v[[y, x]])
    }

    pub fn magnitude(&self) -> Array2<f32> {
        Zip::from(&self.u)
            .and(&self.v)
            .map_collect(|&a, &b| (a * a + b * b).sqrt())
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            u: self.u.mapv(|a| a * factor),
            v: self.v.mapv(|b| b * factor),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Mirror left-right; horizontal components change sign.
    pub fn flip_horizontal(&self) -> Self {
        let mut u = self.u.mapv(|a| -a);
        let mut v = self.v.clone();
        u.invert_axis(Axis(1));
        v.invert_axis(Axis(1));
        Self {
            u: u.as_standard_layout().to_owned(),
            v: v.as_standard_layout().to_owned(),
        }
    }

    /// Resamples to `h x w`, rescaling displacements to the new pixel grid.
    pub fn resize(&self, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDimensions(format!("cannot resize flow to {h}x{w}")));
        }
        if (h, w) == self.dims() {
            return Ok(self.clone());
        }
        let sx = w as f32 / self.width() as f32;
        let sy = h as f32 / self.height() as f32;
        let u = resize_plane(&self.u.view(), h, w, ResizeMode::Bilinear).mapv(|a| a * sx);
        let v = resize_plane(&self.v.view(), h, w, ResizeMode::Bilinear).mapv(|b| b * sy);
        Ok(Self { u, v })
    }
}

fn valid(x: f32) -> bool {
    x.is_finite() && x.abs() <= UNKNOWN_FLOW_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub mean_mag: f64,
    pub median_mag: f64,
    pub max_mag: f64,
}

/// Mean, median and maximum of per-pixel `sqrt(u^2 + v^2)`.
pub fn flow_stats(flow: &FlowField) -> FlowStats {
    let mut mags: Vec<f64> = flow
        .u
        .iter()
        .zip(flow.v.iter())
        .map(|(&a, &b)| ((a as f64).powi(2) + (b as f64).powi(2)).sqrt())
        .collect();
    let n = mags.len();
    let mean_mag = mags.iter().sum::<f64>() / n as f64;
    mags.sort_by(f64::total_cmp);
    let median_mag = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    FlowStats {
        mean_mag,
        median_mag,
        max_mag: mags[n - 1],
    }
}
