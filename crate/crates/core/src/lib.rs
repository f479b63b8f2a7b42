//! Edge-map to color-painting translation with a coarse-to-fine conditional
//! adversarial network, overlap-tiled superresolution, coarse segmentation
//! conditioning and PSNR evaluation.

pub mod config;
pub mod error;
pub mod engine;
pub mod filter;
pub mod imaging;
pub mod jobs;
pub mod masks;
pub mod metrics;
pub mod nn;
pub mod superres;
pub mod surrogate;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use imaging::{EdgeMap, Image, Provenance, Pyramid};
