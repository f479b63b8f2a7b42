//! Raster types shared by every stage of the pipeline.
//!
//! [`Image`] is the 8-bit RGB ground-truth/output domain, [`EdgeMap`] the
//! single-channel conditioning domain. Both are immutable once built.

use std::path::Path;

use image::{imageops, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "expected {} samples for {width}x{height}x3, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Image::new(width, height, data)
    }

    /// Builds an image from normalized planar samples (`3 × height × width`).
    ///
    /// Values are clamped to `[0, 1]` and rounded half-to-even onto the
    /// 0–255 grid.
    pub fn from_planar(width: usize, height: usize, planes: &[f32]) -> Result<Self> {
        let plane = width * height;
        if planes.len() != plane * 3 {
            return Err(Error::Shape(format!(
                "expected {} planar samples, got {}",
                plane * 3,
                planes.len()
            )));
        }
        let mut data = vec![0u8; plane * 3];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = quantize(planes[c * plane + i]);
            }
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Normalized planar view (`value / 255`), channel-major.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0f32; plane * 3];
        for i in 0..plane {
            for c in 0..3 {
                out[c * plane + i] = self.data[i * 3 + c] as f32 / 255.0;
            }
        }
        out
    }

    /// Rec.601 luma in `[0, 1]`.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect()
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{x}+{y} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Image::new(width, height, data)
    }

    /// Resamples with a triangle filter; identity when the size is unchanged.
    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        if width == 0 || height == 0 {
            return Err(Error::Dimension("resize target must be non-empty".into()));
        }
        let buf = self.to_rgb_image();
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        Image::new(width, height, out.into_raw())
    }

    pub(crate) fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_image(self, path)
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round_ties_even() as u8
}

/// Loads any supported raster; grayscale sources are replicated to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, rgb.into_raw())
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    img.to_rgb_image()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    Surrogate,
}

/// Single-channel conditioning raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    provenance: Provenance,
}

impl EdgeMap {
    /// Builds an edge map, clamping every value into `[0, 1]`.
    pub fn new(
        width: usize,
        height: usize,
        mut values: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "edge map must be at least 1x1, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} edge samples, got {}",
                width * height,
                values.len()
            )));
        }
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(EdgeMap {
            width,
            height,
            values,
            provenance,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn resize(&self, width: usize, height: usize) -> Result<EdgeMap> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        if width == 0 || height == 0 {
            return Err(Error::Dimension("resize target must be non-empty".into()));
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.values.clone())
                .expect("buffer length checked at construction");
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        EdgeMap::new(width, height, out.into_raw(), self.provenance)
    }

    /// Writes the map as an 8-bit grayscale PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        let bytes = self.values.iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_error(path, e))
    }
}

/// Loads an 8-bit grayscale conditioning raster (color sources are reduced to luma).
pub fn load_edge_map(path: impl AsRef<Path>, provenance: Provenance) -> Result<EdgeMap> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = decoded.to_luma8();
    let (w, h) = gray.dimensions();
    let values = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    EdgeMap::new(w as usize, h as usize, values, provenance)
}

/// Sparse area-weighted resampling taps for one axis.
///
/// Output sample `i` averages the source interval `[i·s, (i+1)·s)` where
/// `s = n_in / n_out`, weighting each source sample by its overlap.
pub fn area_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = ((i + 1) as f64 * scale).min(n_in as f64);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            let mut taps = Vec::with_capacity(last - first);
            for p in first..last {
                let overlap = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((p, overlap / (hi - lo)));
                }
            }
            taps
        })
        .collect()
}

/// Target length along one axis for an area downsampling factor.
pub fn downsampled_len(n: usize, area_factor: f64) -> usize {
    // Guard against sqrt(4) = 1.9999… style rounding.
    ((n as f64 / area_factor.sqrt()) + 1e-9).floor() as usize
}

/// Multi-scale stack of mean-pooled images.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Image>,
    pub area_factors: Vec<f64>,
}

pub const DEFAULT_AREA_FACTORS: [f64; 3] = [1.0, 2.0, 4.0];

/// Mean-pools `img` once per area factor.
///
/// Level dimensions are `floor(dim / sqrt(factor))`; samples are
/// area-weighted means rounded half-to-even.
pub fn downsample_pyramid(img: &Image, area_factors: &[f64]) -> Result<Pyramid> {
    if area_factors.is_empty() {
        return Err(Error::Parameter("at least one area factor is required".into()));
    }
    let mut levels = Vec::with_capacity(area_factors.len());
    for &factor in area_factors {
        if !(factor >= 1.0) || !factor.is_finite() {
            return Err(Error::Parameter(format!(
                "area factor must be a finite value >= 1, got {factor}"
            )));
        }
        let w = downsampled_len(img.width, factor);
        let h = downsampled_len(img.height, factor);
        if w == 0 || h == 0 {
            return Err(Error::Dimension(format!(
                "{}x{} image too small for area factor {factor}",
                img.width, img.height
            )));
        }
        levels.push(area_resize(img, w, h));
    }
    Ok(Pyramid {
        levels,
        area_factors: area_factors.to_vec(),
    })
}

/// Area-weighted mean pooling to `width × height`, rounded half-to-even.
pub fn area_resize(img: &Image, width: usize, height: usize) -> Image {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let xt = area_taps(img.width, width);
    let yt = area_taps(img.height, height);
    let mut data = vec![0u8; width * height * 3];
    for (oy, ytaps) in yt.iter().enumerate() {
        for (ox, xtaps) in xt.iter().enumerate() {
            let mut acc = [0f64; 3];
            for &(sy, wy) in ytaps {
                for &(sx, wx) in xtaps {
                    let px = img.pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += wy * wx * px[c] as f64;
                    }
                }
            }
            for c in 0..3 {
                // Snap accumulated float noise so exact halves stay exact.
                let v = (acc[c] * 1e9).round() / 1e9;
                data[(oy * width + ox) * 3 + c] = v.round_ties_even().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(width, height, data).expect("non-empty target")
}
