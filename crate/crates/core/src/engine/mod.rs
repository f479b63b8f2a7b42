//! Conditional adversarial training and inference.

pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod generator;
mod infer;
pub mod objective;
pub mod spec;
mod train;

pub use checkpoint::Checkpoint;
pub use data::{load_pairs, PairSet, Sample, Task};
pub use discriminator::Discriminators;
pub use generator::Generator;
pub use infer::InferenceModel;
pub use objective::{cgan_objective, cgan_objective_logits, GeneratorLoss, LossReport, ScaleTerms};
pub use spec::{DiscriminatorSpec, GeneratorSpec, Size};
pub use train::{
    EvalReport, MetricsLine, ObjectiveConfig, RunOutcome, Schedule, StepReport, TrainSetup, Trainer,
};
