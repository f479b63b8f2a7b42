use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointMode {
    /// Origins `s·k` for `k = 1..=floor((dim − T)/s)`. Reproduces the
    /// published segment count; the leading margin stays uncovered.
    PaperExclusive,
    /// `0, s, 2s, …` with the last origin clamped to `dim − T`; every pixel
    /// is covered.
    #[default]
    InclusiveCover,
}

impl EndpointMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper_exclusive" => Ok(EndpointMode::PaperExclusive),
            "inclusive_cover" => Ok(EndpointMode::InclusiveCover),
            _ => Err(Error::Parameter(format!(
                "unknown endpoint mode {s:?} (expected paper_exclusive or inclusive_cover)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EndpointMode::PaperExclusive => "paper_exclusive",
            EndpointMode::InclusiveCover => "inclusive_cover",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub image_width: usize,
    pub image_height: usize,
    pub tile: usize,
    pub stride: usize,
    pub mode: EndpointMode,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

impl TilePlan {
    pub fn segments(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// Tile origins `(x, y)` in raster order (row by row).
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| (x, y)))
            .collect()
    }
}

pub fn axis_origins(dim: usize, tile: usize, stride: usize, mode: EndpointMode) -> Vec<usize> {
    let span = dim - tile;
    match mode {
        EndpointMode::PaperExclusive => (1..=span / stride).map(|k| k * stride).collect(),
        EndpointMode::InclusiveCover => {
            // A stride wider than the tile would leave gaps; clamp it.
            let s = stride.min(tile);
            let mut v: Vec<usize> = (0..=span / s).map(|k| k * s).collect();
            if *v.last().expect("k = 0 always present") < span {
                v.push(span);
            }
            v
        }
    }
}

pub fn plan_tiles(
    image_width: usize,
    image_height: usize,
    tile: usize,
    stride: usize,
    mode: EndpointMode,
) -> Result<TilePlan> {
    if stride == 0 || tile == 0 {
        return Err(Error::Parameter("tile size and stride must be >= 1".into()));
    }
    if tile > image_width || tile > image_height {
        return Err(Error::Dimension(format!(
            "tile {tile} exceeds image {image_width}x{image_height}"
        )));
    }
    if mode == EndpointMode::InclusiveCover && stride > tile {
        tracing::warn!(stride, tile, "stride exceeds tile size; clamping stride, tiles no longer overlap");
    }
    let xs = axis_origins(image_width, tile, stride, mode);
    let ys = axis_origins(image_height, tile, stride, mode);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Dimension(format!(
            "{} plan for {image_width}x{image_height}, tile {tile}, stride {stride} has no tiles",
            mode.label()
        )));
    }
    Ok(TilePlan { image_width, image_height, tile, stride, mode, xs, ys })
}

/// Per-pixel running sums and coverage counts.
///
/// Tiles are 8-bit images, so the 64-bit integer sums are exact and the
/// blended mean does not depend on the order tiles are added.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendAccumulator {
    width: usize,
    height: usize,
    sum: Vec<u64>,
    count: Vec<u32>,
}

impl BlendAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        BlendAccumulator { width, height, sum: vec![0; width * height * 3], count: vec![0; width * height] }
    }

    pub fn add_tile(&mut self, x0: usize, y0: usize, tile: &Image) -> Result<()> {
        if x0 + tile.width() > self.width || y0 + tile.height() > self.height {
            return Err(Error::Shape(format!(
                "tile {}x{} at ({x0}, {y0}) exceeds {}x{} canvas",
                tile.width(),
                tile.height(),
                self.width,
                self.height
            )));
        }
        let tw = tile.width();
        let src = tile.as_bytes();
        for ty in 0..tile.height() {
            let row = (y0 + ty) * self.width + x0;
            for tx in 0..tw {
                self.count[row + tx] += 1;
                for c in 0..3 {
                    self.sum[(row + tx) * 3 + c] += src[(ty * tw + tx) * 3 + c] as u64;
                }
            }
        }
        Ok(())
    }

    /// Merges another accumulator of the same size.
    pub fn merge(&mut self, other: &BlendAccumulator) -> Result<()> {
        if (other.width, other.height) != (self.width, self.height) {
            return Err(Error::Shape("accumulator sizes differ".into()));
        }
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.count.iter_mut().zip(&other.count).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn count(&self, x: usize, y: usize) -> u32 {
        self.count[y * self.width + x]
    }

    pub fn uncovered(&self) -> usize {
        self.count.iter().filter(|&&c| c == 0).count()
    }

    /// Unrounded per-sample means (`sum / count`), interleaved RGB, in
    /// 0–255 units; `None` where uncovered.
    pub fn means(&self) -> Vec<Option<[f64; 3]>> {
        (0..self.width * self.height)
            .map(|i| {
                let n = self.count[i];
                (n > 0).then(|| {
                    let s = &self.sum[i * 3..i * 3 + 3];
                    [s[0] as f64 / n as f64, s[1] as f64 / n as f64, s[2] as f64 / n as f64]
                })
            })
            .collect()
    }

    /// Rounded mean image with uncovered pixels copied from the nearest
    /// covered pixel. Coverage of a tile plan is a product of per-axis
    /// intervals, so the nearest covered pixel is found per axis.
    pub fn finish(&self) -> Result<Image> {
        let covered_x: Vec<bool> = (0..self.width)
            .map(|x| (0..self.height).any(|y| self.count(x, y) > 0))
            .collect();
        let covered_y: Vec<bool> = (0..self.height)
            .map(|y| (0..self.width).any(|x| self.count(x, y) > 0))
            .collect();
        let nx = nearest_true(&covered_x)
            .ok_or_else(|| Error::Shape("no pixel is covered by any tile".into()))?;
        let ny = nearest_true(&covered_y)
            .ok_or_else(|| Error::Shape("no pixel is covered by any tile".into()))?;
        let mut data = vec![0u8; self.width * self.height * 3];
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = if self.count(x, y) > 0 { (x, y) } else { (nx[x], ny[y]) };
                let i = sy * self.width + sx;
                let n = self.count[i];
                if n == 0 {
                    return Err(Error::Shape("tile coverage is not a product of axis intervals".into()));
                }
                for c in 0..3 {
                    let mean = self.sum[i * 3 + c] as f64 / n as f64;
                    data[(y * self.width + x) * 3 + c] = mean.round_ties_even() as u8;
                }
            }
        }
        Image::new(self.width, self.height, data)
    }
}

/// For each index, the nearest index with `flags[j]` set (ties go low).
fn nearest_true(flags: &[bool]) -> Option<Vec<usize>> {
    let set: Vec<usize> = flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect();
    if set.is_empty() {
        return None;
    }
    Some(
        (0..flags.len())
            .map(|i| {
                let pos = set.partition_point(|&j| j < i);
                match (pos.checked_sub(1).map(|p| set[p]), set.get(pos).copied()) {
                    (Some(lo), Some(hi)) => if i - lo <= hi - i { lo } else { hi },
                    (Some(lo), None) => lo,
                    (None, Some(hi)) => hi,
                    (None, None) => unreachable!(),
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub endpoint_mode: EndpointMode,
    pub segments: usize,
    pub output_width: usize,
    pub output_height: usize,
    pub uncovered_pixels: usize,
    pub fill_policy: String,
}

#[derive(Debug, Clone)]
pub struct TiledOutput {
    pub image: Image,
    pub accumulator: BlendAccumulator,
    pub coverage: CoverageReport,
}

/// Runs `model` on every planned tile and averages overlapping outputs on
/// an `upsample`-times larger canvas.
///
/// Tiles are evaluated on up to `workers` threads; outputs are accumulated
/// in raster order of the plan after all tiles finish.
pub fn infer_tiled<M>(
    model: &M,
    input: &Image,
    plan: &TilePlan,
    upsample: usize,
    workers: usize,
) -> Result<TiledOutput>
where
    M: Fn(&Image) -> Result<Image> + Sync,
{
    if (input.width(), input.height()) != (plan.image_width, plan.image_height) {
        return Err(Error::Shape(format!(
            "plan is for {}x{} but input is {}x{}",
            plan.image_width,
            plan.image_height,
            input.width(),
            input.height()
        )));
    }
    if upsample == 0 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    let origins = plan.origins();
    let run = |&(x, y): &(usize, usize)| -> Result<Image> {
        let out = model(&input.crop(x, y, plan.tile, plan.tile)?)?;
        let want = plan.tile * upsample;
        if (out.width(), out.height()) != (want, want) {
            return Err(Error::Shape(format!(
                "model returned {}x{} for a {} tile, expected {want}x{want}",
                out.width(),
                out.height(),
                plan.tile
            )));
        }
        Ok(out)
    };
    let workers = workers.clamp(1, origins.len());
    let tiles: Vec<Result<Image>> = if workers == 1 {
        origins.iter().map(run).collect()
    } else {
        let chunk = origins.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = origins
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("tile worker panicked"))
                .collect()
        })
    };
    let (ow, oh) = (input.width() * upsample, input.height() * upsample);
    let mut acc = BlendAccumulator::new(ow, oh);
    for (&(x, y), tile) in origins.iter().zip(tiles) {
        acc.add_tile(x * upsample, y * upsample, &tile?)?;
    }
    let uncovered = acc.uncovered();
    if uncovered > 0 {
        tracing::info!(uncovered, "filling uncovered pixels from nearest covered pixel");
    }
    let coverage = CoverageReport {
        endpoint_mode: plan.mode,
        segments: plan.segments(),
        output_width: ow,
        output_height: oh,
        uncovered_pixels: uncovered,
        fill_policy: "nearest_covered_pixel".into(),
    };
    Ok(TiledOutput { image: acc.finish()?, accumulator: acc, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_segment_count() {
        let p = plan_tiles(8192, 8192, 1024, 64, EndpointMode::PaperExclusive).unwrap();
        assert_eq!(p.xs.len(), 112);
        assert_eq!(p.segments(), 12544);
        assert_eq!(p.xs[0], 64);
        assert_eq!(*p.xs.last().unwrap(), 7168);
    }

    #[test]
    fn inclusive_examples() {
        let p = plan_tiles(256, 256, 64, 32, EndpointMode::InclusiveCover).unwrap();
        assert_eq!(p.xs, vec![0, 32, 64, 96, 128, 160, 192]);
        assert_eq!(p.segments(), 49);
        let one = plan_tiles(64, 64, 64, 17, EndpointMode::InclusiveCover).unwrap();
        assert_eq!(one.origins(), vec![(0, 0)]);
        let clamped = plan_tiles(100, 64, 64, 32, EndpointMode::InclusiveCover).unwrap();
        assert_eq!(clamped.xs, vec![0, 32, 36]);
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(plan_tiles(32, 64, 64, 8, EndpointMode::InclusiveCover), Err(Error::Dimension(_))));
        assert!(matches!(plan_tiles(64, 64, 8, 0, EndpointMode::InclusiveCover), Err(Error::Parameter(_))));
        assert!(matches!(plan_tiles(64, 64, 64, 8, EndpointMode::PaperExclusive), Err(Error::Dimension(_))));
    }

    #[test]
    fn two_constant_tiles_average() {
        let plan = plan_tiles(6, 4, 4, 2, EndpointMode::InclusiveCover).unwrap();
        assert_eq!(plan.xs, vec![0, 2]);
        let origins = plan.origins();
        let mut acc = BlendAccumulator::new(6, 4);
        acc.add_tile(origins[0].0, 0, &Image::filled(4, 4, [100; 3]).unwrap()).unwrap();
        acc.add_tile(origins[1].0, 0, &Image::filled(4, 4, [200; 3]).unwrap()).unwrap();
        let img = acc.finish().unwrap();
        assert_eq!(img.pixel(0, 0), [100; 3]);
        assert_eq!(img.pixel(2, 1), [150; 3]);
        assert_eq!(img.pixel(3, 3), [150; 3]);
        assert_eq!(img.pixel(5, 0), [200; 3]);
    }

    #[test]
    fn constant_model_has_no_seams() {
        let input = Image::filled(40, 30, [7; 3]).unwrap();
        let plan = plan_tiles(40, 30, 16, 6, EndpointMode::InclusiveCover).unwrap();
        let model = |_: &Image| Image::filled(32, 32, [100, 100, 100]);
        let out = infer_tiled(&model, &input, &plan, 2, 1).unwrap();
        assert_eq!(out.image, Image::filled(80, 60, [100; 3]).unwrap());
        assert_eq!(out.coverage.uncovered_pixels, 0);
    }

    #[test]
    fn paper_exclusive_fills_margin_from_nearest() {
        let data: Vec<u8> = (0..20 * 20 * 3).map(|i| (i % 200) as u8).collect();
        let input = Image::new(20, 20, data).unwrap();
        let plan = plan_tiles(20, 20, 8, 4, EndpointMode::PaperExclusive).unwrap();
        assert_eq!(plan.xs, vec![4, 8, 12]);
        let model = |t: &Image| Ok(t.clone());
        let out = infer_tiled(&model, &input, &plan, 1, 1).unwrap();
        assert_eq!(out.coverage.uncovered_pixels, 20 * 20 - 16 * 16);
        assert_eq!(out.image.pixel(0, 0), input.pixel(4, 4));
        assert_eq!(out.image.pixel(10, 2), input.pixel(10, 4));
        assert_eq!(out.image.pixel(7, 7), input.pixel(7, 7));
    }

    #[test]
    fn model_shape_mismatch() {
        let input = Image::filled(8, 8, [0; 3]).unwrap();
        let plan = plan_tiles(8, 8, 4, 4, EndpointMode::InclusiveCover).unwrap();
        let model = |_: &Image| Image::filled(5, 5, [0; 3]);
        assert!(matches!(infer_tiled(&model, &input, &plan, 1, 1), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn inclusive_cover_reaches_every_pixel(dim in 1usize..200, tile in 1usize..64, stride in 1usize..80) {
            prop_assume!(tile <= dim);
            let xs = axis_origins(dim, tile, stride, EndpointMode::InclusiveCover);
            let mut covered = vec![false; dim];
            for &x in &xs {
                prop_assert!(x + tile <= dim);
                covered[x..x + tile].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
            if (dim - tile) % stride == 0 && stride <= tile {
                prop_assert_eq!(xs.len(), (dim - tile) / stride + 1);
            }
        }

        #[test]
        fn paper_exclusive_count(dim in 1usize..400, tile in 1usize..64, stride in 1usize..80) {
            prop_assume!(tile <= dim);
            let xs = axis_origins(dim, tile, stride, EndpointMode::PaperExclusive);
            prop_assert_eq!(xs.len(), (dim - tile) / stride);
            prop_assert!(xs.iter().all(|&x| x >= 1 && x + tile <= dim));
        }
    }
}
