//! Run configuration file.
//!
//! One TOML document describes the dataset build, both networks, the
//! schedule and the tiled superresolution settings. Unknown keys are
//! rejected. The digest recorded in checkpoints is the SHA-256 of the
//! canonical serialization, so formatting and key order in the source file
//! do not matter.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{DiscriminatorSpec, GeneratorSpec, ObjectiveConfig, Schedule, Size, Task, TrainSetup};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::superres::{EndpointMode, SrFilterConfig};
use crate::surrogate::{BuildOptions, DegradeConfig, EdgeBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub degrade: DegradeConfig,
    pub backend: EdgeBackend,
    pub split_fraction: f64,
    pub corpus_tag: String,
    pub masks_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let b = BuildOptions::default();
        DatasetConfig {
            degrade: b.degrade,
            backend: b.backend,
            split_fraction: b.split_fraction,
            corpus_tag: b.corpus_tag,
            masks_dir: b.masks_dir,
        }
    }
}

impl DatasetConfig {
    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            degrade: self.degrade.clone(),
            backend: self.backend.clone(),
            split_fraction: self.split_fraction,
            corpus_tag: self.corpus_tag.clone(),
            masks_dir: self.masks_dir.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperresConfig {
    /// Training tile edge in high-resolution pixels.
    pub tile: usize,
    pub stride: usize,
    pub factor: usize,
    pub endpoint_mode: EndpointMode,
    pub craquelure_sigma: f64,
    pub workers: usize,
}

impl Default for SuperresConfig {
    fn default() -> Self {
        let f = SrFilterConfig::default();
        SuperresConfig {
            tile: 1024,
            stride: 64,
            factor: f.factor,
            endpoint_mode: EndpointMode::default(),
            craquelure_sigma: f.craquelure_sigma,
            workers: 1,
        }
    }
}

impl SuperresConfig {
    pub fn filter(&self) -> SrFilterConfig {
        SrFilterConfig { craquelure_sigma: self.craquelure_sigma, factor: self.factor }
    }

    /// Low-resolution tile edge.
    pub fn lr_tile(&self) -> usize {
        self.tile / self.factor.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub discriminators: DiscriminatorSpec,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub superres: SuperresConfig,
}


impl RunConfig {
    /// Small single-stage, single-scale setup for square images of `size` px.
    pub fn desk(size: usize, conditioning_channels: usize) -> Self {
        RunConfig {
            generator: GeneratorSpec::single_stage(Size::new(size, size), conditioning_channels, 8, 2),
            discriminators: DiscriminatorSpec::single_scale(8, 3),
            ..RunConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.degrade.validate()?;
        if !(self.dataset.split_fraction > 0.0 && self.dataset.split_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dataset.split_fraction must be in (0, 1], got {}",
                self.dataset.split_fraction
            )));
        }
        self.generator.validate()?;
        self.discriminators.validate()?;
        self.schedule.validate()?;
        let sr = &self.superres;
        if sr.factor == 0 || sr.stride == 0 || sr.tile == 0 || sr.workers == 0 {
            return Err(Error::Config("superres tile, stride, factor and workers must be >= 1".into()));
        }
        if !sr.tile.is_multiple_of(sr.factor) {
            return Err(Error::Config(format!(
                "superres.tile {} must be a multiple of superres.factor {}",
                sr.tile, sr.factor
            )));
        }
        Ok(())
    }

    pub fn train_setup(&self, task: Task) -> TrainSetup {
        TrainSetup {
            generator: self.generator.clone(),
            discriminators: self.discriminators.clone(),
            schedule: self.schedule.clone(),
            objective: self.objective,
            optimizer: self.optimizer,
            seed: self.seed,
            config_hash: self.config_hash(),
            task,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.generator.stage1_output_size, Size::new(1024, 512));
        assert_eq!(c.generator.stage2_output_size, Size::new(2048, 1024));
        assert_eq!(c.discriminators.area_scales, vec![1.0, 2.0, 4.0]);
        assert_eq!(c.dataset.degrade.noise_variance, 100.0);
        assert_eq!(c.dataset.degrade.blur_kernel_width, 5);
        assert_eq!((c.superres.tile, c.superres.stride, c.superres.factor), (1024, 64, 8));
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[schedule]\nstep = 3", "[superres]\ntile = 64\nstrid = 8", "[bogus]"] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn partial_section_and_invalid_values() {
        let c = RunConfig::from_toml("seed = 9\n[schedule]\nsteps = 10\n").unwrap();
        assert_eq!((c.seed, c.schedule.steps, c.schedule.batch), (9, 10, 4));
        assert!(RunConfig::from_toml("[superres]\ntile = 100\n").is_err());
        assert!(RunConfig::from_toml("[dataset]\nsplit_fraction = 0.0\n").is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::from_toml("seed = 3\n[schedule]\nsteps = 10\nbatch = 2\n").unwrap();
        let c = RunConfig::from_toml("seed = 3\n\n[schedule]\nbatch = 2  # two\nsteps = 10\n").unwrap();
        assert_eq!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        assert_ne!(a.config_hash(), RunConfig::default().config_hash());
    }

    proptest! {
        #[test]
        fn canonical_form_is_a_fixed_point(
            seed in any::<u32>(),
            steps in 1u64..100_000,
            frac in 0.01f64..1.0,
            variance in 0.0f64..1e4,
            size in 1usize..64,
            exclusive in any::<bool>(),
        ) {
            let mut c = RunConfig::desk(size * 4, 5);
            c.seed = seed as u64;
            c.schedule.steps = steps;
            c.dataset.split_fraction = frac;
            c.dataset.degrade.noise_variance = variance;
            c.superres.endpoint_mode = if exclusive { EndpointMode::PaperExclusive } else { EndpointMode::InclusiveCover };
            let text = c.canonical();
            let back = RunConfig::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.canonical(), text);
        }
    }
}
