use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use revenant_core::engine::{load_pairs, Checkpoint, InferenceModel, Task, Trainer};
use revenant_core::imaging::load_image;
use revenant_core::metrics::{curve_report, psnr, read_metrics_stream, Condition, ReportOptions};
use revenant_core::superres::{make_sr_pairs, model_tile, superresolve, EndpointMode};
use revenant_core::surrogate::{build_pairs, EdgeBackend, PairManifest, Split};
use revenant_core::{synth, RunConfig};

use crate::service::{self, ServiceConfig};

/// Edge-map to painting translation, tiled superresolution and evaluation.
#[derive(Debug, Parser)]
#[command(name = "revenant", version)]
pub struct Cli {
    /// Seed overriding the seeded steps of the chosen command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus and pair-manifest preparation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the edge-to-color translator.
    Train(TrainArgs),
    /// Translate one edge map with a trained checkpoint.
    Infer(InferArgs),
    /// Train the superresolution model on low/high-resolution tile pairs.
    SrTrain(TrainArgs),
    /// Superresolve an image with overlapping tiles.
    SrInfer(SrInferArgs),
    /// Metrics and learning-curve reports.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the local HTTP service for the annotation UI.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Build (surrogate edge map, painting) pairs from a directory of paintings.
    Build(BuildArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Cut a large image into superresolution training pairs.
    SrPairs(SrPairsArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub truth_dir: PathBuf,
    /// Manifest path; conditioning images are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of images in the training split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Run configuration whose `[dataset]` section supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `<stem>.json` annotations to attach as masks.
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    /// `classical_gradient` or `learned_hed`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub hed_weights: Option<PathBuf>,
    #[arg(long)]
    pub hed_sha256: Option<String>,
    #[arg(long)]
    pub corpus_tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Flat shapes whose color follows the shape type.
    Shapes,
    /// Equal-luma blobs whose color only the masks reveal.
    Ambiguous,
    /// One large cracked texture for superresolution.
    Texture,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Annotation directory for the ambiguous corpus (default `<out>/masks`).
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 768)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct SrPairsArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// High-resolution tile edge.
    #[arg(long, default_value_t = 1024)]
    pub tile: usize,
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub craquelure_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Edge map (color inputs are reduced to luma).
    #[arg(long)]
    pub input: PathBuf,
    /// Polygon annotation document; required by mask-conditioned checkpoints.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrInferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Input tile edge; must match the checkpoint when given.
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub stride: usize,
    /// Upsampling factor; must match the checkpoint when given.
    #[arg(long)]
    pub factor: Option<usize>,
    /// `inclusive_cover` or `paper_exclusive`.
    #[arg(long, default_value = "inclusive_cover")]
    pub endpoint: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Compare learning curves of two or more runs.
    Compare(CompareArgs),
    /// PSNR between two images of equal size.
    Psnr(PsnrArgs),
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories (containing metrics.jsonl) or metrics files.
    #[arg(long, num_args = 2.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Condition per run (`with_ssssl`, `without_ssssl`, `other`); detected
    /// from each run's checkpoint when omitted.
    #[arg(long, num_args = 2..)]
    pub conditions: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub final_window: usize,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.9)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct PsnrArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for masks, job records and results.
    #[arg(long)]
    pub storage: PathBuf,
    /// Directory of edge maps or source images addressable by `image_ref`.
    #[arg(long)]
    pub images: PathBuf,
    /// Ground truth with the same file names, for PSNR in job records.
    #[arg(long)]
    pub truth_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 64)]
    pub sr_stride: usize,
    #[arg(long, default_value = "inclusive_cover")]
    pub sr_endpoint: String,
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Dataset(DatasetCommand::Build(a)) => dataset_build(a, seed),
        Command::Dataset(DatasetCommand::Synth(a)) => dataset_synth(a, seed),
        Command::Dataset(DatasetCommand::SrPairs(a)) => dataset_sr_pairs(a, seed),
        Command::Train(a) => train(a, seed, false),
        Command::SrTrain(a) => train(a, seed, true),
        Command::Infer(a) => infer(a),
        Command::SrInfer(a) => sr_infer(a),
        Command::Eval(EvalCommand::Compare(a)) => eval_compare(a, seed),
        Command::Eval(EvalCommand::Psnr(a)) => eval_psnr(a),
        Command::Serve(a) => serve(a),
    }
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn manifest_summary(m: &PairManifest, path: &Path) -> Result<serde_json::Value> {
    Ok(json!({
        "manifest": path.display().to_string(),
        "train": m.count(Split::Train),
        "test": m.count(Split::Test),
        "sha256": file_sha256(path)?,
    }))
}

fn dataset_build(a: BuildArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut opts = cfg.dataset.build_options();
    if let Some(s) = seed {
        opts.degrade.rng_seed = s;
    }
    if let Some(f) = a.split {
        opts.split_fraction = f;
    }
    if let Some(b) = &a.backend {
        opts.backend = EdgeBackend::parse(b, a.hed_weights.clone(), a.hed_sha256.clone())?;
    }
    if a.masks_dir.is_some() {
        opts.masks_dir = a.masks_dir.clone();
    }
    if let Some(t) = a.corpus_tag {
        opts.corpus_tag = t;
    }
    let m = build_pairs(&a.truth_dir, &a.out, &opts)?;
    tracing::info!(records = m.records.len(), "pair manifest written");
    emit(manifest_summary(&m, &a.out)?);
    Ok(())
}

fn dataset_synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let written = match a.kind {
        SynthKind::Shapes => synth::write_shapes_corpus(&a.out, a.count, a.size, seed)?.len(),
        SynthKind::Ambiguous => {
            let masks = a.masks_dir.clone().unwrap_or_else(|| a.out.join("masks"));
            synth::write_ambiguous_corpus(&a.out, &masks, a.count, a.size, seed)?.len()
        }
        SynthKind::Texture => {
            synth::texture_image(a.width, a.height, seed)?.save(a.out.join("texture.png"))?;
            1
        }
    };
    emit(json!({ "out": a.out.display().to_string(), "images": written }));
    Ok(())
}

fn dataset_sr_pairs(a: SrPairsArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut filter = cfg.superres.filter();
    if let Some(f) = a.factor {
        filter.factor = f;
    }
    if let Some(s) = a.craquelure_sigma {
        filter.craquelure_sigma = s;
    }
    let source = load_image(&a.source)?;
    let m = make_sr_pairs(&source, a.tile, &filter, a.split, seed.unwrap_or(cfg.seed), &a.out)?;
    emit(manifest_summary(&m, &a.out)?);
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>, superres: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let task = if superres { Task::SuperResolution { factor: cfg.superres.factor } } else { Task::Translation };
    let manifest = PairManifest::read(&a.manifest)?;
    let data = load_pairs(&manifest, &cfg.generator, task)?;
    let setup = cfg.train_setup(task);
    let mut trainer = match &a.resume {
        Some(ck) => Trainer::resume(setup, data, &Checkpoint::load(ck)?)?,
        None => Trainer::new(setup, data)?,
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    std::fs::write(a.out_dir.join("config.toml"), cfg.canonical())?;
    tracing::info!(config_hash = %cfg.config_hash(), start = trainer.step_count(), steps = cfg.schedule.steps, "training");
    let outcome = trainer.run(&a.out_dir, |l| {
        if let Some(p) = l.test_psnr {
            tracing::info!(step = l.step, test_psnr = p, d_real = l.d_real_term, d_fake = l.d_fake_term, g = l.g_term, "eval");
        }
    })?;
    emit(json!({
        "checkpoint": outcome.checkpoint.display().to_string(),
        "metrics": outcome.metrics.display().to_string(),
        "step": trainer.step_count(),
        "config_hash": cfg.config_hash(),
        "test_psnr": outcome.final_eval.map(|e| e.psnr_db),
    }));
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = InferenceModel::load(&a.checkpoint)?;
    if model.superres_factor().is_some() {
        bail!("{} is a superresolution checkpoint; use sr-infer", a.checkpoint.display());
    }
    let img = service::translate_file(&model, &a.input, a.mask.as_deref())?;
    img.save(&a.out)?;
    emit(json!({ "out": a.out.display().to_string(), "width": img.width(), "height": img.height() }));
    Ok(())
}

fn sr_infer(a: SrInferArgs) -> Result<()> {
    let model = InferenceModel::load(&a.checkpoint)?;
    let tile = model_tile(&model)?;
    let factor = model.superres_factor().expect("checked by model_tile");
    if a.tile.is_some_and(|t| t != tile) {
        bail!("--tile {} does not match the checkpoint's input tile {tile}", a.tile.unwrap_or(0));
    }
    if a.factor.is_some_and(|f| f != factor) {
        bail!("--factor {} does not match the checkpoint's factor {factor}", a.factor.unwrap_or(0));
    }
    let mode = EndpointMode::parse(&a.endpoint)?;
    let input = load_image(&a.input)?;
    let out = superresolve(&model, &input, a.stride, mode, a.workers)?;
    out.image.save(&a.out)?;
    let sidecar = a.out.with_extension("coverage.json");
    std::fs::write(&sidecar, serde_json::to_vec_pretty(&out.coverage)?)?;
    emit(json!({
        "out": a.out.display().to_string(),
        "coverage": sidecar.display().to_string(),
        "segments": out.coverage.segments,
        "uncovered_pixels": out.coverage.uncovered_pixels,
    }));
    Ok(())
}

fn detect_condition(run: &Path) -> Result<Condition> {
    let ck = run.join("checkpoint.ckpt");
    let header = Checkpoint::load(&ck)?.header;
    Ok(match (header.task, header.generator.conditioning_channels) {
        (Task::Translation, 5) => Condition::WithSsssl,
        (Task::Translation, 1) => Condition::WithoutSsssl,
        _ => Condition::Other,
    })
}

fn eval_compare(a: CompareArgs, seed: Option<u64>) -> Result<()> {
    let conditions: Vec<Condition> = if a.conditions.is_empty() {
        a.runs.iter().map(|r| detect_condition(r)).collect::<Result<_>>()?
    } else {
        if a.conditions.len() != a.runs.len() {
            bail!("{} runs but {} conditions", a.runs.len(), a.conditions.len());
        }
        a.conditions.iter().map(|c| Condition::parse(c)).collect::<Result<_, _>>()?
    };
    let mut distinct = conditions.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        bail!("all runs share condition {}; pass --conditions to label them", conditions[0].label());
    }
    let mut records = Vec::new();
    for (run, &c) in a.runs.iter().zip(&conditions) {
        let path = if run.is_dir() { run.join("metrics.jsonl") } else { run.clone() };
        records.extend(read_metrics_stream(&path, c)?);
    }
    let opts = ReportOptions {
        final_window: a.final_window,
        bootstrap_resamples: a.resamples,
        confidence: a.confidence,
        seed: seed.unwrap_or(0),
    };
    let report = curve_report(&records, &opts)?;
    report.write(&a.out)?;
    print!("{}", report.render_table());
    Ok(())
}

fn eval_psnr(a: PsnrArgs) -> Result<()> {
    let p = psnr(&load_image(&a.reference)?, &load_image(&a.candidate)?)?;
    emit(json!({ "psnr_db": p.db, "exact": p.exact }));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        checkpoint: a.checkpoint,
        storage: a.storage,
        images: a.images,
        truth_dir: a.truth_dir,
        workers: a.workers,
        sr_stride: a.sr_stride,
        sr_endpoint: EndpointMode::parse(&a.sr_endpoint)?,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(cfg, a.addr))
}
