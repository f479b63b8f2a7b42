use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raster size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub const fn new(width: usize, height: usize) -> Self {
        Size { width, height }
    }

    pub fn scaled(self, factor: usize) -> Size {
        Size::new(self.width * factor, self.height * factor)
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Architecture of the coarse-to-fine generator.
///
/// Stage 1 is the global network at `stage1_output_size`; every further stage
/// is a local enhancer that doubles the resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub stage1_output_size: Size,
    pub stage2_output_size: Size,
    pub stage_count: usize,
    pub conditioning_channels: usize,
    pub base_feature_width: usize,
    pub residual_block_count: usize,
    /// Adds the head output to the logit of the (3-channel) conditioning,
    /// so an untrained network reproduces its input.
    #[serde(default)]
    pub residual_output: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            stage1_output_size: Size::new(1024, 512),
            stage2_output_size: Size::new(2048, 1024),
            stage_count: 2,
            conditioning_channels: 1,
            base_feature_width: 16,
            residual_block_count: 2,
            residual_output: false,
        }
    }
}

impl GeneratorSpec {
    /// Single-stage generator producing `size` directly.
    pub fn single_stage(size: Size, conditioning_channels: usize, width: usize, blocks: usize) -> Self {
        GeneratorSpec {
            stage1_output_size: size,
            stage2_output_size: size.scaled(2),
            stage_count: 1,
            conditioning_channels,
            base_feature_width: width,
            residual_block_count: blocks,
            residual_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_count == 0 {
            return Err(Error::Parameter("stage_count must be at least 1".into()));
        }
        if self.conditioning_channels == 0 || self.base_feature_width < 2 {
            return Err(Error::Parameter(
                "conditioning_channels must be >= 1 and base_feature_width >= 2".into(),
            ));
        }
        let s1 = self.stage1_output_size;
        if !s1.width.is_multiple_of(4) || !s1.height.is_multiple_of(4) || s1.width == 0 || s1.height == 0 {
            return Err(Error::Parameter(format!(
                "stage-1 size {s1} must be a non-zero multiple of 4 in both axes"
            )));
        }
        if self.residual_output && self.conditioning_channels != 3 {
            return Err(Error::Parameter(format!(
                "residual_output needs 3 conditioning channels, got {}",
                self.conditioning_channels
            )));
        }
        if self.stage2_output_size != s1.scaled(2) {
            return Err(Error::Parameter(format!(
                "stage-2 size {} must be twice stage-1 size {s1}",
                self.stage2_output_size
            )));
        }
        Ok(())
    }

    /// Resolution of the final output.
    pub fn output_size(&self) -> Size {
        self.stage_output_size(self.stage_count)
    }

    /// Output resolution of stage `s` (1-based).
    pub fn stage_output_size(&self, stage: usize) -> Size {
        self.stage1_output_size.scaled(1 << (stage - 1))
    }
}

/// Multi-scale discriminator set: one identical patch network per area scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub count: usize,
    pub area_scales: Vec<f64>,
    pub base_feature_width: usize,
    pub layer_count: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            count: 3,
            area_scales: crate::imaging::DEFAULT_AREA_FACTORS.to_vec(),
            base_feature_width: 16,
            layer_count: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn single_scale(width: usize, layers: usize) -> Self {
        DiscriminatorSpec {
            count: 1,
            area_scales: vec![1.0],
            base_feature_width: width,
            layer_count: layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count != self.area_scales.len() {
            return Err(Error::Parameter(format!(
                "discriminator count {} must equal the number of area scales {}",
                self.count,
                self.area_scales.len()
            )));
        }
        if self.area_scales.iter().any(|&s| !(s >= 1.0) || !s.is_finite()) {
            return Err(Error::Parameter("area scales must be finite and >= 1".into()));
        }
        if self.base_feature_width == 0 || self.layer_count == 0 {
            return Err(Error::Parameter(
                "discriminator width and layer count must be positive".into(),
            ));
        }
        Ok(())
    }
}
