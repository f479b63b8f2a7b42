//! Superresolution pairs from a single high-resolution image and
//! overlap-tiled inference with lattice averaging.

mod tiling;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tiling::{
    axis_origins, infer_tiled, plan_tiles, BlendAccumulator, CoverageReport, EndpointMode,
    TiledOutput, TilePlan,
};

use crate::engine::InferenceModel;
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::imaging::{area_resize, Image};
use crate::surrogate::{train_count, PairManifest, PairRecord, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrFilterConfig {
    /// Gaussian low-pass σ (pixels) suppressing craquelure; 0 disables it.
    pub craquelure_sigma: f64,
    /// Linear downsampling factor for the low-resolution member.
    pub factor: usize,
}

impl Default for SrFilterConfig {
    fn default() -> Self {
        SrFilterConfig { craquelure_sigma: 2.0, factor: 8 }
    }
}

/// Origins of the non-overlapping `tile × tile` grid, raster order.
pub fn sr_tile_origins(width: usize, height: usize, tile: usize) -> Result<Vec<(usize, usize)>> {
    if tile == 0 || tile > width || tile > height {
        return Err(Error::Dimension(format!(
            "tile {tile} does not fit a {width}x{height} source"
        )));
    }
    Ok((0..height / tile)
        .flat_map(|j| (0..width / tile).map(move |i| (i * tile, j * tile)))
        .collect())
}

pub fn low_pass(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let planes = img.to_planar();
    let filtered: Vec<f32> = planes
        .chunks_exact(w * h)
        .flat_map(|p| gaussian_blur(p, w, h, sigma))
        .collect();
    Image::from_planar(w, h, &filtered).expect("same size")
}

/// `(low-resolution, filtered high-resolution)` pair for one tile.
pub fn sr_pair(source: &Image, x: usize, y: usize, tile: usize, cfg: &SrFilterConfig) -> Result<(Image, Image)> {
    if cfg.factor == 0 || !tile.is_multiple_of(cfg.factor) {
        return Err(Error::Parameter(format!(
            "tile {tile} must be a multiple of the factor {}",
            cfg.factor
        )));
    }
    let hr = low_pass(&source.crop(x, y, tile, tile)?, cfg.craquelure_sigma);
    let lr = area_resize(&hr, tile / cfg.factor, tile / cfg.factor);
    Ok((lr, hr))
}

/// Cuts `source` into non-overlapping tiles, writes `lr/` and `hr/` PNGs
/// next to `out` and a manifest with `conditioning = lr`, `truth = hr`.
pub fn make_sr_pairs(
    source: &Image,
    tile: usize,
    cfg: &SrFilterConfig,
    split_fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<PairManifest> {
    let origins = sr_tile_origins(source.width(), source.height(), tile)?;
    if origins.len() < 2 {
        return Err(Error::Corpus(format!(
            "{} tile(s) of {tile} px; at least 2 are needed for a train/test split",
            origins.len()
        )));
    }
    let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut order: Vec<usize> = (0..origins.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(origins.len(), split_fraction);
    let mut records = Vec::with_capacity(origins.len());
    for (i, &(x, y)) in origins.iter().enumerate() {
        let (lr, hr) = sr_pair(source, x, y, tile, cfg)?;
        let name = format!("tile_{i:04}_{x}_{y}.png");
        lr.save(base.join("lr").join(&name))?;
        hr.save(base.join("hr").join(&name))?;
        let is_train = order[..n_train].contains(&i);
        records.push(PairRecord {
            conditioning: format!("lr/{name}"),
            truth: format!("hr/{name}"),
            split: if is_train { Split::Train } else { Split::Test },
            mask: None,
            corpus_tag: format!("superres_x{}", cfg.factor),
        });
    }
    let m = PairManifest::new(records, base);
    m.write(out)?;
    Ok(m)
}

/// Baseline: mean-pool to the low resolution, then bilinear upsample.
pub fn smooth_upsample(lr: &Image, factor: usize) -> Result<Image> {
    lr.resize(lr.width() * factor, lr.height() * factor)
}

/// Low-resolution tile edge a superresolution checkpoint consumes.
pub fn model_tile(model: &InferenceModel) -> Result<usize> {
    let factor = model
        .superres_factor()
        .ok_or_else(|| Error::Channel("checkpoint is not a superresolution model".into()))?;
    let out = model.output_size();
    if out.width != out.height || !out.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!("superresolution output {out} is not a square multiple of {factor}")));
    }
    Ok(out.width / factor)
}

/// Superresolves a whole image with overlapping tiles of the model's input size.
pub fn superresolve(
    model: &InferenceModel,
    input: &Image,
    stride: usize,
    mode: EndpointMode,
    workers: usize,
) -> Result<TiledOutput> {
    let tile = model_tile(model)?;
    let factor = model.superres_factor().expect("checked by model_tile");
    let plan = plan_tiles(input.width(), input.height(), tile, stride, mode)?;
    infer_tiled(&|lr: &Image| model.upscale(lr), input, &plan, factor, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counts() {
        assert_eq!(sr_tile_origins(8192, 12288, 1024).unwrap().len(), 96);
        assert_eq!(sr_tile_origins(1024, 1024, 1024).unwrap(), vec![(0, 0)]);
        assert!(matches!(sr_tile_origins(1000, 1000, 1024), Err(Error::Dimension(_))));
    }

    #[test]
    fn pairs_are_written() {
        let data: Vec<u8> = (0..64 * 48 * 3).map(|i| (i * 31 % 256) as u8).collect();
        let src = Image::new(64, 48, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = SrFilterConfig { craquelure_sigma: 1.0, factor: 4 };
        let m = make_sr_pairs(&src, 16, &cfg, 0.75, 3, &dir.path().join("sr.jsonl")).unwrap();
        assert_eq!(m.records.len(), 12);
        assert_eq!(m.count(Split::Train), 9);
        m.validate().unwrap();
        let lr = crate::imaging::load_image(m.resolve(&m.records[0].conditioning)).unwrap();
        assert_eq!((lr.width(), lr.height()), (4, 4));
    }

    #[test]
    fn low_pass_keeps_constants() {
        let img = Image::filled(9, 9, [10, 20, 30]).unwrap();
        assert_eq!(low_pass(&img, 2.0), img);
    }
}
