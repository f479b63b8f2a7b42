//! Surrogate training pairs: paintings are reduced to edge maps and degraded
//! to resemble brush-drawn underdrawings, then paired with the original.

mod degrade;
mod edges;
pub mod hed;
mod manifest;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use degrade::{degrade, degrade_indexed, DegradeConfig};
pub use edges::{classical_edges, extract_edges, EdgeBackend, CLASSICAL_SCALES};
pub use manifest::{PairManifest, PairRecord, Split};

use crate::error::{Error, Result};
use crate::imaging::load_image;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Options for [`build_pairs`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub degrade: DegradeConfig,
    pub backend: EdgeBackend,
    /// Fraction of images assigned to the training split.
    pub split_fraction: f64,
    pub corpus_tag: String,
    /// Directory of `<stem>.json` annotations attached as masks when present.
    pub masks_dir: Option<PathBuf>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            degrade: DegradeConfig::default(),
            backend: EdgeBackend::ClassicalGradient,
            split_fraction: 0.8,
            corpus_tag: "corpus".into(),
            masks_dir: None,
        }
    }
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Number of training records for `n` images; both splits stay non-empty
/// whenever the fraction allows it.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let raw = (n as f64 * fraction).round() as usize;
    let lo = 1;
    let hi = if fraction < 1.0 { n - 1 } else { n };
    raw.clamp(lo, hi.max(lo))
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}

/// Builds the surrogate pair set for every image in `truth_dir` and writes
/// the manifest to `out`. Conditioning rasters go to `<out dir>/conditioning/`.
///
/// The split is a seeded shuffle (`degrade.rng_seed`); degradation noise for
/// image `i` (in file-name order) uses RNG stream `i`.
pub fn build_pairs(truth_dir: &Path, out: &Path, opts: &BuildOptions) -> Result<PairManifest> {
    opts.degrade.validate()?;
    if !(opts.split_fraction > 0.0 && opts.split_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "split fraction must be in (0, 1], got {}",
            opts.split_fraction
        )));
    }
    let files = list_images(truth_dir)?;
    if files.len() < 2 {
        return Err(Error::Corpus(format!(
            "{} contains {} decodable image(s); at least 2 are required",
            truth_dir.display(),
            files.len()
        )));
    }
    let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let cond_dir = base.join("conditioning");

    let mut order: Vec<usize> = (0..files.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.degrade.rng_seed);
    order.shuffle(&mut rng);
    let n_train = train_count(files.len(), opts.split_fraction);
    let mut is_train = vec![false; files.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }

    let mut records = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let img = load_image(file)?;
        let edges = extract_edges(&img, &opts.backend)?;
        let cond = degrade_indexed(&edges, &opts.degrade, i as u64)?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{i}"));
        let cond_path = cond_dir.join(format!("{stem}.png"));
        cond.save(&cond_path)?;
        let mask = match &opts.masks_dir {
            Some(dir) => {
                let p = dir.join(format!("{stem}.json"));
                p.is_file().then(|| relative_to(&p, &base))
            }
            None => None,
        };
        records.push(PairRecord {
            conditioning: relative_to(&cond_path, &base),
            truth: relative_to(file, &base),
            split: if is_train[i] { Split::Train } else { Split::Test },
            mask,
            corpus_tag: opts.corpus_tag.clone(),
        });
    }
    let manifest = PairManifest::new(records, base);
    manifest.write(out)?;
    Ok(manifest)
}
