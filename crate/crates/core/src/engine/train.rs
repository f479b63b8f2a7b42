//! Alternating discriminator/generator optimization.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader};
use super::data::{tensor_image, PairSet, Sample, Task};
use super::discriminator::Discriminators;
use super::generator::Generator;
use super::objective::{
    cgan_objective_logits, fake_term_logit_grad, generator_term_logit_grad, generator_term_logits,
    real_term_logit_grad, GeneratorLoss, LossReport,
};
use super::spec::{DiscriminatorSpec, GeneratorSpec};
use crate::error::{Error, Result};
use crate::imaging::ensure_parent;
use crate::metrics::{mse, psnr_from_mse};
use crate::nn::kernels::area_taps_f32;
use crate::nn::{Adam, AdamConfig, Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub steps: u64,
    pub batch: usize,
    /// Evaluate on the test split every this many steps (and at the end).
    pub eval_cadence: u64,
    /// Share of steps spent training stage 1 alone when there are several stages.
    pub phase1_fraction: f64,
    pub checkpoint_cadence: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { steps: 2000, batch: 4, eval_cadence: 100, phase1_fraction: 0.5, checkpoint_cadence: 500 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.eval_cadence == 0 || self.checkpoint_cadence == 0 {
            return Err(Error::Config("batch and cadences must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) {
            return Err(Error::Config(format!(
                "phase1_fraction must be in [0, 1], got {}",
                self.phase1_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub generator_loss: GeneratorLoss,
    /// Weight of the auxiliary `mean |G(s) − x|` term; 0 disables it.
    pub l1_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { generator_loss: GeneratorLoss::NonSaturating, l1_weight: 0.0 }
    }
}

/// Everything that defines a training run apart from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub generator: GeneratorSpec,
    pub discriminators: DiscriminatorSpec,
    pub schedule: Schedule,
    pub objective: ObjectiveConfig,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub config_hash: String,
    pub task: Task,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: u64,
    pub d_real_term: f64,
    pub d_fake_term: f64,
    pub g_term: f64,
    pub test_psnr: Option<f64>,
    pub test_mse: Option<f64>,
    pub g_form: GeneratorLoss,
    pub l1_term: Option<f64>,
    pub phase: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub phase: u8,
    pub loss: LossReport,
    pub l1_term: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean of per-image PSNR over the test split.
    pub psnr_db: f64,
    pub mse: f64,
    pub images: usize,
}

pub struct Trainer {
    setup: TrainSetup,
    data: PairSet,
    /// Stage-1 resolution copies of the training pairs for phase 1.
    coarse: Option<Vec<(Tensor, Tensor)>>,
    gen: Generator,
    disc: Discriminators,
    g_opt: Adam,
    d_opt: Adam,
    step: u64,
}

fn pool(t: &Tensor, factor: usize) -> Tensor {
    let mut g = Graph::new(false);
    let x = g.input(t.clone(), false);
    let (h, w) = (t.height(), t.width());
    let y = g.resample(
        x,
        Arc::new(area_taps_f32(h, h / factor)),
        Arc::new(area_taps_f32(w, w / factor)),
    );
    g.take_value(y)
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn seed_tensor(like: &Tensor, grad: Vec<f64>, sign: f64) -> Tensor {
    Tensor::from_vec(like.shape(), grad.into_iter().map(|g| (sign * g) as f32).collect())
        .expect("same length as the score map")
}

impl Trainer {
    pub fn new(setup: TrainSetup, data: PairSet) -> Result<Self> {
        setup.schedule.validate()?;
        if data.channels != setup.generator.conditioning_channels {
            return Err(Error::Channel(format!(
                "data has {} conditioning channels, generator expects {}",
                data.channels, setup.generator.conditioning_channels
            )));
        }
        let gen = Generator::new(&setup.generator, setup.seed)?;
        let disc = Discriminators::new(&setup.discriminators, setup.generator.conditioning_channels, setup.seed)?;
        let g_opt = Adam::new(setup.optimizer, gen.store());
        let d_opt = Adam::new(setup.optimizer, disc.store());
        let coarse = (setup.generator.stage_count > 1).then(|| {
            let f = 1 << (setup.generator.stage_count - 1);
            data.train.iter().map(|s| (pool(&s.cond, f), pool(&s.truth, f))).collect()
        });
        Ok(Trainer { setup, data, coarse, gen, disc, g_opt, d_opt, step: 0 })
    }

    /// Restores a run. The stored configuration digest must match `setup`.
    pub fn resume(setup: TrainSetup, data: PairSet, ck: &Checkpoint) -> Result<Self> {
        let h = &ck.header;
        if h.config_hash != setup.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs current {}",
                h.config_hash, setup.config_hash
            )));
        }
        let mut t = Trainer::new(setup, data)?;
        t.gen.store_mut().load(&ck.generator)?;
        t.disc.store_mut().load(&ck.discriminator)?;
        t.g_opt.load(t.gen.store(), h.generator_optimizer_steps, &ck.generator_optimizer)?;
        t.d_opt.load(t.disc.store(), h.discriminator_optimizer_steps, &ck.discriminator_optimizer)?;
        t.step = h.step;
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn setup(&self) -> &TrainSetup {
        &self.setup
    }

    pub fn phase1_steps(&self) -> u64 {
        if self.setup.generator.stage_count > 1 {
            (self.setup.schedule.phase1_fraction * self.setup.schedule.steps as f64).round() as u64
        } else {
            0
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                step: self.step,
                config_hash: self.setup.config_hash.clone(),
                seed: self.setup.seed,
                task: self.setup.task,
                generator: self.setup.generator.clone(),
                discriminators: self.setup.discriminators.clone(),
                generator_loss: self.setup.objective.generator_loss,
                adam: self.setup.optimizer,
                generator_optimizer_steps: self.g_opt.steps(),
                discriminator_optimizer_steps: self.d_opt.steps(),
                tensors: Vec::new(),
            },
            generator: self.gen.store().export(),
            discriminator: self.disc.store().export(),
            generator_optimizer: self.g_opt.export(self.gen.store()),
            discriminator_optimizer: self.d_opt.export(self.disc.store()),
        }
    }

    /// Training-set indices for `step`; depends only on `(seed, step)`.
    fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.setup.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(step);
        let n = self.data.train.len();
        rand::seq::index::sample(&mut rng, n, self.setup.schedule.batch.min(n)).into_vec()
    }

    /// One D-step followed by one G-step.
    pub fn step(&mut self) -> Result<StepReport> {
        let next = self.step + 1;
        let phase1 = next <= self.phase1_steps();
        let stages = if phase1 { 1 } else { self.setup.generator.stage_count };
        let idx = self.batch_indices(next);
        let (cond, truth) = match (&self.coarse, phase1) {
            (Some(c), true) => (
                Tensor::stack(&idx.iter().map(|&i| &c[i].0).collect::<Vec<_>>())?,
                Tensor::stack(&idx.iter().map(|&i| &c[i].1).collect::<Vec<_>>())?,
            ),
            _ => (
                Tensor::stack(&idx.iter().map(|&i| &self.data.train[i].cond).collect::<Vec<_>>())?,
                Tensor::stack(&idx.iter().map(|&i| &self.data.train[i].truth).collect::<Vec<_>>())?,
            ),
        };
        let form = self.setup.objective.generator_loss;

        // D-step: ascend E[log D(s, x)] + E[log(1 − D(s, G(s)))] on every scale.
        // Seeds go in at the logits so a saturated sigmoid still passes gradient.
        let fake = self.gen.generate_stages(&cond, stages)?;
        let (real_logits, fake_logits) = {
            let mut g = Graph::new(true);
            g.train(self.disc.store());
            let c = g.input(cond.clone(), false);
            let r = g.input(truth.clone(), false);
            let f = g.input(fake, false);
            let real_maps = self.disc.forward_logits(&mut g, c, r)?;
            let fake_maps = self.disc.forward_logits(&mut g, c, f)?;
            let real_logits: Vec<Vec<f64>> = real_maps.iter().map(|&m| to_f64(g.value(m))).collect();
            let fake_logits: Vec<Vec<f64>> = fake_maps.iter().map(|&m| to_f64(g.value(m))).collect();
            let mut seeds = Vec::with_capacity(2 * real_maps.len());
            for (k, &m) in real_maps.iter().enumerate() {
                seeds.push((m, seed_tensor(g.value(m), real_term_logit_grad(&real_logits[k]), -1.0)));
            }
            for (k, &m) in fake_maps.iter().enumerate() {
                seeds.push((m, seed_tensor(g.value(m), fake_term_logit_grad(&fake_logits[k]), -1.0)));
            }
            let grads = g.backward(seeds)?;
            self.d_opt.step(self.disc.store_mut(), &grads);
            (real_logits, fake_logits)
        };
        let mut loss = cgan_objective_logits(&real_logits, &fake_logits, form)?;

        // G-step: descend the generator term through the updated discriminators.
        let mut g = Graph::new(true);
        g.train(self.gen.store());
        let c = g.input(cond, false);
        let out = self.gen.forward(&mut g, c, stages)?;
        let maps = self.disc.forward_logits(&mut g, c, out)?;
        let mut seeds = Vec::with_capacity(maps.len() + 1);
        let mut g_total = 0.0;
        for (k, &m) in maps.iter().enumerate() {
            let s = to_f64(g.value(m));
            let term = generator_term_logits(&s, form);
            loss.per_scale[k].g_term = term;
            g_total += term;
            seeds.push((m, seed_tensor(g.value(m), generator_term_logit_grad(&s, form), 1.0)));
        }
        loss.g_term = g_total;
        let w = self.setup.objective.l1_weight;
        let l1_term = if w > 0.0 {
            let produced = g.value(out);
            let n = produced.len() as f64;
            let mut abs = 0.0;
            let grad: Vec<f32> = produced
                .data()
                .iter()
                .zip(truth.data())
                .map(|(&p, &t)| {
                    abs += (p - t).abs() as f64;
                    ((p - t).signum() as f64 * w / n) as f32
                })
                .collect();
            seeds.push((out, Tensor::from_vec(produced.shape(), grad)?));
            Some(abs / n)
        } else {
            None
        };
        let grads = g.backward(seeds)?;
        drop(g);
        self.g_opt.step(self.gen.store_mut(), &grads);
        self.step = next;
        Ok(StepReport { step: next, phase: if phase1 { 1 } else { 2 }, loss, l1_term })
    }

    /// Mean PSNR of the full-resolution generator output over `samples`.
    pub fn evaluate_on(&self, samples: &[Sample]) -> Result<Option<EvalReport>> {
        evaluate(&self.gen, samples)
    }

    pub fn evaluate(&self) -> Result<Option<EvalReport>> {
        evaluate(&self.gen, &self.data.test)
    }

    fn metrics_line(&self, r: &StepReport, eval: Option<EvalReport>) -> MetricsLine {
        MetricsLine {
            step: r.step,
            d_real_term: r.loss.d_real_term,
            d_fake_term: r.loss.d_fake_term,
            g_term: r.loss.g_term,
            test_psnr: eval.map(|e| e.psnr_db),
            test_mse: eval.map(|e| e.mse),
            g_form: r.loss.generator_loss,
            l1_term: r.l1_term,
            phase: r.phase,
        }
    }

    fn metrics_up_to_step(&self, path: &Path) -> Result<String> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut kept = String::new();
        for line in text.lines() {
            let parsed: MetricsLine = serde_json::from_str(line)
                .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
            if parsed.step <= self.step {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        Ok(kept)
    }

    /// Trains to `schedule.steps`, writing `<out_dir>/metrics.jsonl`
    /// and refreshing `<out_dir>/checkpoint.ckpt` at the checkpoint cadence
    /// and at the end.
    pub fn run(&mut self, out_dir: &Path, mut on_line: impl FnMut(&MetricsLine)) -> Result<RunOutcome> {
        let metrics_path = out_dir.join("metrics.jsonl");
        let ckpt_path = out_dir.join("checkpoint.ckpt");
        ensure_parent(&metrics_path)?;
        // A fresh run starts a new stream; a resumed one drops lines logged
        // after the checkpoint it resumed from.
        let kept = if self.step == 0 { String::new() } else { self.metrics_up_to_step(&metrics_path)? };
        std::fs::write(&metrics_path, kept).map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = std::fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        let total = self.setup.schedule.steps;
        let mut last_eval = None;
        while self.step < total {
            let report = self.step()?;
            let at_end = report.step == total;
            let eval = if at_end || report.step % self.setup.schedule.eval_cadence == 0 {
                let e = self.evaluate()?;
                last_eval = e.or(last_eval);
                e
            } else {
                None
            };
            let line = self.metrics_line(&report, eval);
            let mut text = serde_json::to_string(&line).expect("metrics serialize");
            text.push('\n');
            metrics.write_all(text.as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;
            on_line(&line);
            if at_end || report.step % self.setup.schedule.checkpoint_cadence == 0 {
                self.checkpoint().save(&ckpt_path)?;
            }
        }
        if total == 0 || self.step > total {
            self.checkpoint().save(&ckpt_path)?;
        }
        Ok(RunOutcome { checkpoint: ckpt_path, metrics: metrics_path, final_eval: last_eval })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub final_eval: Option<EvalReport>,
}

pub(crate) fn evaluate(gen: &Generator, samples: &[Sample]) -> Result<Option<EvalReport>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let (mut psnr_sum, mut mse_sum) = (0.0, 0.0);
    for chunk in samples.chunks(8) {
        let cond = Tensor::stack(&chunk.iter().map(|s| &s.cond).collect::<Vec<_>>())?;
        let out = gen.generate(&cond)?;
        for (i, s) in chunk.iter().enumerate() {
            let m = mse(&tensor_image(&out, i)?, &s.truth_image)?;
            mse_sum += m;
            psnr_sum += psnr_from_mse(m).db;
        }
    }
    let n = samples.len() as f64;
    Ok(Some(EvalReport { psnr_db: psnr_sum / n, mse: mse_sum / n, images: samples.len() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spec::Size;

    fn toy_data(n_train: usize, n_test: usize, size: usize, channels: usize) -> PairSet {
        let sample = |k: usize| {
            let cond_data: Vec<f32> = (0..channels * size * size)
                .map(|i| if (i % size + k) % 8 < 4 { 1.0 } else { 0.0 })
                .collect();
            let cond = Tensor::from_vec([1, channels, size, size], cond_data.clone()).unwrap();
            let truth_data: Vec<f32> = (0..3 * size * size)
                .map(|i| cond_data[i % (size * size)] * 0.8 + 0.1 * (i / (size * size)) as f32)
                .collect();
            let truth = Tensor::from_vec([1, 3, size, size], truth_data).unwrap();
            let truth_image = tensor_image(&truth, 0).unwrap();
            Sample { cond, truth: super::super::data::image_tensor(&truth_image), truth_image }
        };
        PairSet {
            train: (0..n_train).map(sample).collect(),
            test: (0..n_test).map(|k| sample(k + 100)).collect(),
            size: Size::new(size, size),
            channels,
        }
    }

    fn setup(stages: usize) -> TrainSetup {
        let gspec = if stages == 1 {
            GeneratorSpec::single_stage(Size::new(32, 32), 1, 4, 1)
        } else {
            GeneratorSpec {
                stage1_output_size: Size::new(16, 16),
                stage2_output_size: Size::new(32, 32),
                stage_count: 2,
                conditioning_channels: 1,
                base_feature_width: 4,
                residual_block_count: 1,
                residual_output: false,
            }
        };
        TrainSetup {
            generator: gspec,
            discriminators: DiscriminatorSpec { base_feature_width: 4, layer_count: 2, ..Default::default() },
            schedule: Schedule { steps: 4, batch: 2, eval_cadence: 2, phase1_fraction: 0.5, checkpoint_cadence: 2 },
            objective: ObjectiveConfig::default(),
            optimizer: AdamConfig::default(),
            seed: 9,
            config_hash: "h".into(),
            task: Task::Translation,
        }
    }

    #[test]
    fn single_step_smoke() {
        let mut t = Trainer::new(setup(1), toy_data(2, 1, 32, 1)).unwrap();
        let r = t.step().unwrap();
        assert_eq!(r.step, 1);
        assert!(r.loss.d_real_term.is_finite() && r.loss.d_fake_term.is_finite() && r.loss.g_term.is_finite());
        assert_eq!(r.loss.per_scale.len(), 3);
    }

    #[test]
    fn two_phase_schedule() {
        let mut t = Trainer::new(setup(2), toy_data(3, 1, 32, 1)).unwrap();
        assert_eq!(t.phase1_steps(), 2);
        let phases: Vec<u8> = (0..4).map(|_| t.step().unwrap().phase).collect();
        assert_eq!(phases, vec![1, 1, 2, 2]);
    }

    #[test]
    fn resume_reproduces_next_step() {
        let mut a = Trainer::new(setup(2), toy_data(3, 1, 32, 1)).unwrap();
        a.step().unwrap();
        a.step().unwrap();
        let ck = Checkpoint::from_bytes(&a.checkpoint().to_bytes()).unwrap();
        let next_a = a.step().unwrap();
        let mut b = Trainer::resume(setup(2), toy_data(3, 1, 32, 1), &ck).unwrap();
        let next_b = b.step().unwrap();
        assert_eq!(next_a, next_b);
        assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());

        let mut other = setup(2);
        other.config_hash = "different".into();
        assert!(matches!(Trainer::resume(other, toy_data(3, 1, 32, 1), &ck), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn l1_flag_reports_term() {
        let mut s = setup(1);
        s.objective.l1_weight = 10.0;
        let mut t = Trainer::new(s, toy_data(2, 1, 32, 1)).unwrap();
        assert!(t.step().unwrap().l1_term.unwrap() > 0.0);
    }

    #[test]
    fn run_writes_metrics_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(setup(1), toy_data(2, 2, 32, 1)).unwrap();
        let mut lines = Vec::new();
        let out = t.run(dir.path(), |l| lines.push(l.clone())).unwrap();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].test_psnr.is_none() && lines[1].test_psnr.is_some());
        assert!(out.final_eval.is_some());
        let ck = Checkpoint::load(&out.checkpoint).unwrap();
        assert_eq!(ck.header.step, 4);
        let text = std::fs::read_to_string(out.metrics).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().starts_with("{\"step\":1,\"d_real_term\":"));
    }

    #[test]
    fn resumed_run_matches_uninterrupted_stream() {
        let full = tempfile::tempdir().unwrap();
        Trainer::new(setup(1), toy_data(2, 2, 32, 1)).unwrap().run(full.path(), |_| {}).unwrap();

        let split = tempfile::tempdir().unwrap();
        let mut short = setup(1);
        short.schedule.steps = 2;
        Trainer::new(short, toy_data(2, 2, 32, 1)).unwrap().run(split.path(), |_| {}).unwrap();
        // A stray line past the checkpoint, as if the process died after logging it.
        let m = split.path().join("metrics.jsonl");
        let extra = std::fs::read_to_string(&m).unwrap().lines().last().unwrap().replace("\"step\":2", "\"step\":3");
        std::fs::write(&m, std::fs::read_to_string(&m).unwrap() + &extra + "\n").unwrap();
        let ck = Checkpoint::load(split.path().join("checkpoint.ckpt")).unwrap();
        Trainer::resume(setup(1), toy_data(2, 2, 32, 1), &ck).unwrap().run(split.path(), |_| {}).unwrap();

        for f in ["metrics.jsonl", "checkpoint.ckpt"] {
            assert_eq!(std::fs::read(full.path().join(f)).unwrap(), std::fs::read(split.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        assert!(matches!(Trainer::new(setup(1), toy_data(2, 1, 32, 5)), Err(Error::Channel(_))));
    }
}
