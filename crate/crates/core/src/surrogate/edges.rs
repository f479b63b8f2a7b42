use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::hed::HedDetector;
use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, reflect};
use crate::imaging::{EdgeMap, Image, Provenance};

/// Edge extractor used to turn a painting into a surrogate underdrawing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum EdgeBackend {
    /// Pretrained holistically-nested edge detector loaded from a pinned
    /// safetensors file.
    LearnedHed { weights: PathBuf, sha256: String },
    /// Multi-scale gradient magnitude; hermetic and deterministic.
    ClassicalGradient,
}

impl EdgeBackend {
    pub fn parse(name: &str, weights: Option<PathBuf>, sha256: Option<String>) -> Result<Self> {
        match name {
            "classical_gradient" => Ok(EdgeBackend::ClassicalGradient),
            "learned_hed" => Ok(EdgeBackend::LearnedHed {
                weights: weights.ok_or_else(|| {
                    Error::Parameter("learned_hed needs a weights path".into())
                })?,
                sha256: sha256.ok_or_else(|| {
                    Error::Parameter("learned_hed needs the expected sha256 of the weights".into())
                })?,
            }),
            other => Err(Error::Parameter(format!(
                "unknown edge backend {other:?} (expected learned_hed or classical_gradient)"
            ))),
        }
    }
}

/// Blur scales (σ, pixels) of the classical detector; 0 means unblurred.
pub const CLASSICAL_SCALES: [f64; 3] = [0.0, 1.0, 2.0];

pub fn extract_edges(img: &Image, backend: &EdgeBackend) -> Result<EdgeMap> {
    match backend {
        EdgeBackend::ClassicalGradient => Ok(classical_edges(img)),
        EdgeBackend::LearnedHed { weights, sha256 } => {
            HedDetector::load(weights, sha256)?.detect(img)
        }
    }
}

/// Scale-normalized Sobel magnitude of the luma, averaged over
/// [`CLASSICAL_SCALES`] and clamped to `[0, 1]`. A unit luma step responds
/// with roughly 1 next to the boundary.
pub fn classical_edges(img: &Image) -> EdgeMap {
    let (w, h) = (img.width(), img.height());
    let luma = img.luma();
    let mut acc = vec![0f32; w * h];
    for &sigma in &CLASSICAL_SCALES {
        let plane = if sigma > 0.0 {
            gaussian_blur(&luma, w, h, sigma)
        } else {
            luma.clone()
        };
        // Sobel/4 of a blurred unit step peaks at 2/(σ√(2π)).
        let norm = if sigma > 0.0 {
            (sigma * (2.0 * std::f64::consts::PI).sqrt() / 2.0) as f32
        } else {
            1.0
        };
        let mag = sobel_magnitude(&plane, w, h);
        for (a, m) in acc.iter_mut().zip(mag) {
            *a += norm * m / CLASSICAL_SCALES.len() as f32;
        }
    }
    EdgeMap::new(w, h, acc, Provenance::Surrogate).expect("sized from image")
}

fn sobel_magnitude(p: &[f32], w: usize, h: usize) -> Vec<f32> {
    let at = |x: i64, y: i64| p[reflect(y, h) * w + reflect(x, w)];
    let mut out = vec![0f32; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt() / 4.0;
        }
    }
    out
}
