//! Canonical in-memory rasters and their PNG/JPEG I/O.
//!
//! Every module works on real-valued, channel-last pixels in `[0, 1]`.
//! Conversion from and to 8-bit happens only here.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luminance weights used to collapse RGB to a single channel.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Default threshold for binarizing ground-truth masks.
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

/// An RGB image, `H x W x 3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f32>,
}

impl Image {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::InvalidDimensions(format!(
                "image must be HxWx3 with nonzero size, got {h}x{w}x{c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("image value {v}")));
        }
        Ok(Self { pixels })
    }

    /// Builds an image from a per-pixel closure, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let pixels = Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            let v = f(y, x, c);
            if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, 1.0)
            }
        });
        Self { pixels }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[[y, x, c]]
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.pixels.index_axis(Axis(2), c)
    }

    /// Single-channel luminance.
    pub fn to_gray(&self) -> Array2<f32> {
        let (h, w) = self.dims();
        Array2::from_shape_fn((h, w), |(y, x)| {
            LUMA_WEIGHTS[0] * self.pixels[[y, x, 0]]
                + LUMA_WEIGHTS[1] * self.pixels[[y, x, 1]]
                + LUMA_WEIGHTS[2] * self.pixels[[y, x, 2]]
        })
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = self.pixels.clone();
        pixels.invert_axis(Axis(1));
        Self {
            pixels: pixels.as_standard_layout().to_owned(),
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.pixels.len() as f64)
    }

    fn to_rgb8(&self) -> RgbImage {
        let (h, w) = self.dims();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = |c| to_u8(self.pixels[[y as usize, x as usize, c]]);
            image::Rgb([p(0), p(1), p(2)])
        })
    }
}

/// A single-channel saliency prediction or ground-truth mask, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Array2<f32>,
    is_binary: bool,
}

impl SaliencyMap {
    /// Continuous map; values must lie in `[0, 1]`.
    pub fn new(values: Array2<f32>) -> Result<Self> {
        check_plane(&values)?;
        Ok(Self {
            values,
            is_binary: false,
        })
    }

    /// Binary map; every value must be exactly 0 or 1.
    pub fn binary(values: Array2<f32>) -> Result<Self> {
        check_plane(&values)?;
        if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::OutOfRange(format!("binary mask value {v}")));
        }
        Ok(Self {
            values,
            is_binary: true,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f32) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Array2::zeros((height, width)),
            is_binary: true,
        }
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    pub fn is_binary(&self) -> bool {
        self.is_binary
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Values at or above `threshold` become 1, the rest 0.
    pub fn binarize(&self, threshold: f32) -> SaliencyMap {
        SaliencyMap {
            values: self.values.mapv(|v| if v >= threshold { 1.0 } else { 0.0 }),
            is_binary: true,
        }
    }

    /// Pixel-wise `1 - value`.
    pub fn complement(&self) -> SaliencyMap {
        SaliencyMap {
            values: self.values.mapv(|v| 1.0 - v),
            is_binary: self.is_binary,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut values = self.values.clone();
        values.invert_axis(Axis(1));
        Self {
            values: values.as_standard_layout().to_owned(),
            is_binary: self.is_binary,
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }
}

fn check_plane(values: &Array2<f32>) -> Result<()> {
    let (h, w) = values.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidDimensions(format!("empty map {h}x{w}")));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("map value {v}")));
    }
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| Error::UndecodableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn encode_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    }
}

/// Loads an 8-bit raster as RGB scaled into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    });
    Image::new(pixels)
}

/// Writes an image as 8-bit PNG.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    image
        .to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_err(path, e))
}

/// Loads a mask. Single-channel rasters are used directly, color rasters are
/// collapsed with [`LUMA_WEIGHTS`]. With a threshold the result is binary.
pub fn load_mask(path: impl AsRef<Path>, binarize_threshold: Option<f32>) -> Result<SaliencyMap> {
    let path = path.as_ref();
    let img = open(path)?;
    let values = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                g.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
            })
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                let p = rgb.get_pixel(x as u32, y as u32);
                let l = LUMA_WEIGHTS[0] * p[0] as f32
                    + LUMA_WEIGHTS[1] * p[1] as f32
                    + LUMA_WEIGHTS[2] * p[2] as f32;
                (l / 255.0).clamp(0.0, 1.0)
            })
        }
    };
    let map = SaliencyMap::new(values)?;
    Ok(match binarize_threshold {
        Some(t) => map.binarize(t),
        None => map,
    })
}

/// Writes a map as 8-bit single-channel PNG.
pub fn save_mask(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let (h, w) = map.dims();
    let g = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_u8(map.values[[y as usize, x as usize]])])
    });
    g.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_err(path, e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Resamples one plane to `h x w` using pixel-center alignment and
/// replicated borders.
pub fn resize_plane(src: &ArrayView2<'_, f32>, h: usize, w: usize, mode: ResizeMode) -> Array2<f32> {
    let (sh, sw) = src.dim();
    if (sh, sw) == (h, w) {
        return src.to_owned();
    }
    let sy = sh as f32 / h as f32;
    let sx = sw as f32 / w as f32;
    match mode {
        ResizeMode::Nearest => Array2::from_shape_fn((h, w), |(y, x)| {
            let iy = (((y as f32 + 0.5) * sy) as usize).min(sh - 1);
            let ix = (((x as f32 + 0.5) * sx) as usize).min(sw - 1);
            src[[iy, ix]]
        }),
        ResizeMode::Bilinear => {
            let ys: Vec<(usize, usize, f32)> = (0..h).map(|y| axis_taps(y, sy, sh)).collect();
            let xs: Vec<(usize, usize, f32)> = (0..w).map(|x| axis_taps(x, sx, sw)).collect();
            Array2::from_shape_fn((h, w), |(y, x)| {
                let (y0, y1, fy) = ys[y];
                let (x0, x1, fx) = xs[x];
                let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
                let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
                top * (1.0 - fy) + bottom * fy
            })
        }
    }
}

/// Bilinear sample of one plane at fractional `(x, y)`, replicating edges.
pub fn sample_plane(plane: &ArrayView2<'_, f32>, x: f32, y: f32) -> f32 {
    let (h, w) = plane.dim();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
    let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear RGB sample at fractional `(x, y)`, replicating edges.
pub fn sample_rgb(image: &Image, x: f32, y: f32) -> [f32; 3] {
    let (h, w) = image.dims();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let p = &image.pixels;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = p[[y0, x0, c]] * (1.0 - fx) + p[[y0, x1, c]] * fx;
        let bottom = p[[y1, x0, c]] * (1.0 - fx) + p[[y1, x1, c]] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

fn axis_taps(i: usize, scale: f32, n: usize) -> (usize, usize, f32) {
    let s = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f32)
}

fn check_target(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidDimensions(format!("cannot resize to {h}x{w}")));
    }
    Ok(())
}

/// Resizes an image to exactly `h x w`.
pub fn resize(image: &Image, h: usize, w: usize, mode: ResizeMode) -> Result<Image> {
    check_target(h, w)?;
    let mut out = Array3::zeros((h, w, 3));
    for c in 0..3 {
        let plane = resize_plane(&image.channel(c), h, w, mode);
        out.index_axis_mut(Axis(2), c).assign(&plane);
    }
    Ok(Image {
        pixels: out.mapv(|v: f32| v.clamp(0.0, 1.0)),
    })
}

/// Resizes a mask; binary masks should use [`ResizeMode::Nearest`] to keep their value set.
pub fn resize_map(map: &SaliencyMap, h: usize, w: usize, mode: ResizeMode) -> Result<SaliencyMap> {
    check_target(h, w)?;
    let values = resize_plane(&map.values.view(), h, w, mode).mapv(|v| v.clamp(0.0, 1.0));
    Ok(SaliencyMap {
        values,
        is_binary: map.is_binary && mode == ResizeMode::Nearest,
    })
}
