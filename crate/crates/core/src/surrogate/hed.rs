//! Inference-only holistically-nested edge detection.
//!
//! Expects a safetensors file with the tensor layout of the widely used
//! PyTorch port (`netVggOne.0.weight`, …, `netScoreOne.weight`, …,
//! `netCombine.0.weight`). Channel widths are read from the file, so
//! reduced-width variants load too.

use std::path::Path;
use std::sync::Arc;

use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{EdgeMap, Image, Provenance};
use crate::nn::kernels::{bilinear_taps, max_pool2};
use crate::nn::{Graph, Tensor};

/// Per-channel BGR means subtracted from 0–255 inputs.
const BGR_MEAN: [f32; 3] = [104.006_99, 116.668_77, 122.678_91];

const VGG_BLOCKS: [(&str, &[usize]); 5] = [
    ("netVggOne", &[0, 2]),
    ("netVggTwo", &[1, 3]),
    ("netVggThree", &[1, 3, 5]),
    ("netVggFour", &[1, 3, 5]),
    ("netVggFive", &[1, 3, 5]),
];

const SCORE_HEADS: [&str; 5] = ["netScoreOne", "netScoreTwo", "netScoreThr", "netScoreFou", "netScoreFiv"];

#[derive(Debug, Clone)]
struct ConvWeights {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct HedDetector {
    blocks: Vec<Vec<ConvWeights>>,
    scores: Vec<ConvWeights>,
    combine: ConvWeights,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl HedDetector {
    /// Loads and checksum-verifies the weight asset.
    pub fn load(path: &Path, expected_sha256: &str) -> Result<Self> {
        let asset_err = |reason: String| Error::Asset {
            path: path.to_path_buf(),
            expected_sha256: expected_sha256.to_string(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| asset_err(e.to_string()))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if !actual.eq_ignore_ascii_case(expected_sha256) {
            return Err(asset_err(format!("checksum mismatch, file has {actual}")));
        }
        let st = SafeTensors::deserialize(&bytes).map_err(|e| asset_err(e.to_string()))?;
        let conv = |name: &str| -> Result<ConvWeights> {
            let weight = read_tensor(&st, &format!("{name}.weight")).map_err(&asset_err)?;
            let bias = read_tensor(&st, &format!("{name}.bias")).map_err(&asset_err)?;
            if bias.len() != weight.shape()[0] {
                return Err(asset_err(format!("{name}: bias/weight size mismatch")));
            }
            let bias = Tensor::from_vec([bias.len(), 1, 1, 1], bias.into_vec())?;
            Ok(ConvWeights { weight, bias })
        };
        let blocks = VGG_BLOCKS
            .iter()
            .map(|(block, idx)| idx.iter().map(|i| conv(&format!("{block}.{i}"))).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let scores = SCORE_HEADS.iter().map(|n| conv(n)).collect::<Result<Vec<_>>>()?;
        let combine = conv("netCombine.0")?;
        Ok(HedDetector { blocks, scores, combine })
    }

    pub fn detect(&self, img: &Image) -> Result<EdgeMap> {
        let (w, h) = (img.width(), img.height());
        let planes = img.to_planar();
        let plane = w * h;
        let mut bgr = vec![0f32; 3 * plane];
        for c in 0..3 {
            let src = &planes[(2 - c) * plane..(3 - c) * plane];
            for (d, s) in bgr[c * plane..(c + 1) * plane].iter_mut().zip(src) {
                *d = s * 255.0 - BGR_MEAN[c];
            }
        }
        let mut x = Tensor::from_vec([1, 3, h, w], bgr)?;
        let mut sides = Vec::with_capacity(5);
        for (bi, block) in self.blocks.iter().enumerate() {
            if bi > 0 {
                if x.height() < 2 || x.width() < 2 {
                    return Err(Error::Dimension(format!("{w}x{h} image too small for edge detection")));
                }
                x = max_pool2(&x);
            }
            for cw in block {
                x = conv(&x, cw, 1)?;
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let side = conv(&x, &self.scores[bi], 0)?;
            sides.push(upsample_to(&side, h, w));
        }
        let mut stacked = sides.remove(0);
        for s in &sides {
            stacked = Tensor::concat_channels(&stacked, s)?;
        }
        let fused = conv(&stacked, &self.combine, 0)?;
        let values = fused.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        EdgeMap::new(w, h, values, Provenance::Surrogate)
    }
}

fn conv(x: &Tensor, cw: &ConvWeights, pad: usize) -> Result<Tensor> {
    let mut g = Graph::new(false);
    let xi = g.input(x.clone(), false);
    let wi = g.input(cw.weight.clone(), false);
    let bi = g.input(cw.bias.clone(), false);
    let out = g.conv2d(xi, wi, Some(bi), 1, pad)?;
    Ok(g.take_value(out))
}

fn upsample_to(x: &Tensor, h: usize, w: usize) -> Tensor {
    if x.height() == h && x.width() == w {
        return x.clone();
    }
    let mut g = Graph::new(false);
    let xi = g.input(x.clone(), false);
    let rows = Arc::new(bilinear_taps(x.height(), h));
    let cols = Arc::new(bilinear_taps(x.width(), w));
    let out = g.resample(xi, rows, cols);
    g.take_value(out)
}

fn read_tensor(st: &SafeTensors<'_>, name: &str) -> std::result::Result<Tensor, String> {
    let view = st.tensor(name).map_err(|e| format!("{name}: {e}"))?;
    if view.dtype() != Dtype::F32 {
        return Err(format!("{name}: expected f32, found {:?}", view.dtype()));
    }
    let data: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let shape = view.shape();
    let shape4 = match *shape {
        [a] => [a, 1, 1, 1],
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(format!("{name}: unsupported rank {}", shape.len())),
    };
    Tensor::from_vec(shape4, data).map_err(|e| e.to_string())
}
