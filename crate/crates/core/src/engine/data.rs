//! Loads manifest records into network-ready tensors.

use serde::{Deserialize, Serialize};

use super::spec::{GeneratorSpec, Size};
use crate::error::{Error, Result};
use crate::imaging::{load_edge_map, load_image, EdgeMap, Image, Provenance};
use crate::masks::{encode_channels, rasterize, PolygonAnnotation, SegMask};
use crate::nn::Tensor;
use crate::surrogate::{PairManifest, PairRecord, Split};

/// Number of one-hot planes appended when masks condition the model.
pub const MASK_PLANES: usize = 4;

/// What the conditioning raster is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    /// Edge map (plus optional mask planes) to color image.
    #[default]
    Translation,
    /// Low-resolution color tile, nearest-upsampled by `factor`, to the
    /// high-resolution tile.
    SuperResolution { factor: usize },
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, C, H, W]` in `[0, 1]`.
    pub cond: Tensor,
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub truth: Tensor,
    pub truth_image: Image,
}

#[derive(Debug, Clone)]
pub struct PairSet {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub size: Size,
    pub channels: usize,
}

pub fn image_tensor(img: &Image) -> Tensor {
    Tensor::from_vec([1, 3, img.height(), img.width()], img.to_planar()).expect("sized from image")
}

pub fn edge_tensor(edge: &EdgeMap) -> Tensor {
    Tensor::from_vec([1, 1, edge.height(), edge.width()], edge.values().to_vec()).expect("sized from map")
}

/// Sample `n` of a `[N, 3, H, W]` tensor as an 8-bit image.
pub fn tensor_image(t: &Tensor, n: usize) -> Result<Image> {
    if t.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", t.channels())));
    }
    Image::from_planar(t.width(), t.height(), t.sample(n))
}

/// Edge-map conditioning, with mask planes when `mask` is given.
pub fn translation_conditioning(edge: &EdgeMap, mask: Option<&SegMask>, size: Size) -> Result<Tensor> {
    let edge = edge.resize(size.width, size.height)?;
    let base = edge_tensor(&edge);
    match mask {
        None => Ok(base),
        Some(m) => {
            let planes = encode_channels(&m.resize_nearest(size.width, size.height)?);
            Tensor::concat_channels(&base, &planes)
        }
    }
}

/// Triangle-filter upsampling of a low-resolution tile to `size`.
pub fn superres_conditioning(lr: &Image, factor: usize, size: Size) -> Result<Tensor> {
    if lr.width() * factor != size.width || lr.height() * factor != size.height {
        return Err(Error::Shape(format!(
            "{}x{} input times {factor} does not give the model size {size}",
            lr.width(),
            lr.height()
        )));
    }
    Ok(image_tensor(&lr.resize(size.width, size.height)?))
}

fn load_record(
    manifest: &PairManifest,
    index: usize,
    rec: &PairRecord,
    spec: &GeneratorSpec,
    task: Task,
) -> Result<Sample> {
    let size = spec.output_size();
    let truth_native = load_image(manifest.resolve(&rec.truth))?;
    let truth_image = truth_native.resize(size.width, size.height)?;
    let cond = match task {
        Task::Translation => {
            let edge = load_edge_map(manifest.resolve(&rec.conditioning), Provenance::Surrogate)?;
            let mask = match spec.conditioning_channels {
                1 => None,
                c if c == 1 + MASK_PLANES => {
                    let path = rec.mask.as_ref().ok_or_else(|| {
                        Error::Manifest(format!(
                            "record {index} has no mask but the model expects {c} conditioning channels"
                        ))
                    })?;
                    let ann = PolygonAnnotation::load(manifest.resolve(path))?;
                    Some(rasterize(&ann, truth_native.width(), truth_native.height())?)
                }
                c => {
                    return Err(Error::Channel(format!(
                        "edge-map conditioning has 1 or {} channels, not {c}",
                        1 + MASK_PLANES
                    )))
                }
            };
            translation_conditioning(&edge, mask.as_ref(), size)?
        }
        Task::SuperResolution { factor } => {
            if spec.conditioning_channels != 3 {
                return Err(Error::Channel(format!(
                    "superresolution conditioning has 3 channels, the model expects {}",
                    spec.conditioning_channels
                )));
            }
            let lr = load_image(manifest.resolve(&rec.conditioning))?;
            superres_conditioning(&lr, factor, size)?
        }
    };
    Ok(Sample { cond, truth: image_tensor(&truth_image), truth_image })
}

/// Loads and validates every record of `manifest` at the generator's output size.
pub fn load_pairs(manifest: &PairManifest, spec: &GeneratorSpec, task: Task) -> Result<PairSet> {
    manifest.validate()?;
    let mut set = PairSet {
        train: Vec::new(),
        test: Vec::new(),
        size: spec.output_size(),
        channels: spec.conditioning_channels,
    };
    for (i, rec) in manifest.records.iter().enumerate() {
        let sample = load_record(manifest, i, rec, spec, task)?;
        match rec.split {
            Split::Train => set.train.push(sample),
            Split::Test => set.test.push(sample),
        }
    }
    if set.train.is_empty() {
        return Err(Error::Manifest("manifest has no training records".into()));
    }
    Ok(set)
}
