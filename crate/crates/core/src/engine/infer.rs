use std::path::Path;

use super::checkpoint::Checkpoint;
use super::data::{superres_conditioning, tensor_image, translation_conditioning, Task, MASK_PLANES};
use super::generator::Generator;
use super::spec::Size;
use crate::error::{Error, Result};
use crate::imaging::{EdgeMap, Image};
use crate::masks::SegMask;

/// Evaluation-mode generator restored from a checkpoint. Stateless per
/// call, so one handle may serve concurrent callers.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    gen: Generator,
    task: Task,
    step: u64,
    config_hash: String,
}

impl InferenceModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut gen = Generator::new(&ck.header.generator, ck.header.seed)?;
        gen.store_mut().load(&ck.generator)?;
        Ok(InferenceModel {
            gen,
            task: ck.header.task,
            step: ck.header.step,
            config_hash: ck.header.config_hash.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn output_size(&self) -> Size {
        self.gen.spec().output_size()
    }

    pub fn conditioning_channels(&self) -> usize {
        self.gen.spec().conditioning_channels
    }

    pub fn expects_mask(&self) -> bool {
        self.task == Task::Translation && self.conditioning_channels() == 1 + MASK_PLANES
    }

    /// Checks the mask/no-mask contract without running the network.
    pub fn check_mask_contract(&self, has_mask: bool) -> Result<()> {
        if self.task != Task::Translation {
            return Err(Error::Channel("superresolution checkpoints take a color image, not an edge map".into()));
        }
        match (self.expects_mask(), has_mask) {
            (true, false) => Err(Error::Channel(format!(
                "checkpoint was trained with segmentation masks ({} conditioning channels); a mask is required",
                self.conditioning_channels()
            ))),
            (false, true) => Err(Error::Channel(
                "checkpoint was trained without segmentation masks; remove the mask".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Translates an edge map (resized to the model resolution) to a color image.
    pub fn infer(&self, edge: &EdgeMap, mask: Option<&SegMask>) -> Result<Image> {
        self.check_mask_contract(mask.is_some())?;
        let cond = translation_conditioning(edge, mask, self.output_size())?;
        tensor_image(&self.gen.generate(&cond)?, 0)
    }

    /// Superresolves one low-resolution tile by the checkpoint's factor.
    pub fn upscale(&self, lr: &Image) -> Result<Image> {
        let Task::SuperResolution { factor } = self.task else {
            return Err(Error::Channel("checkpoint is not a superresolution model".into()));
        };
        let cond = superres_conditioning(lr, factor, self.output_size())?;
        tensor_image(&self.gen.generate(&cond)?, 0)
    }

    pub fn superres_factor(&self) -> Option<usize> {
        match self.task {
            Task::SuperResolution { factor } => Some(factor),
            Task::Translation => None,
        }
    }
}
