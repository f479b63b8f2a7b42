//! Local HTTP service backing the annotation UI.
//!
//! Storage layout under the storage directory:
//! `masks/<mask_id>.json` (append-only), `jobs/<job_id>.json`,
//! `results/<job_id>.png` and, for superresolution jobs,
//! `results/<job_id>.coverage.json`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;

use revenant_core::engine::InferenceModel;
use revenant_core::imaging::{load_edge_map, load_image};
use revenant_core::jobs::{JobKind, JobRecord};
use revenant_core::masks::{rasterize, PolygonAnnotation};
use revenant_core::metrics::psnr;
use revenant_core::superres::{superresolve, EndpointMode};
use revenant_core::{Image, Provenance};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub storage: PathBuf,
    /// Directory served under `/api/images` and resolved by `image_ref`.
    pub images: PathBuf,
    /// Optional ground truth with the same file names; enables `psnr_db`.
    pub truth_dir: Option<PathBuf>,
    pub workers: usize,
    pub sr_stride: usize,
    pub sr_endpoint: EndpointMode,
}

/// Translates an edge-map file, applying an annotation file when given.
///
/// An annotation without polygons counts as no mask, so mask-free
/// checkpoints accept it.
pub fn translate_file(model: &InferenceModel, edge_path: &Path, mask_path: Option<&Path>) -> anyhow::Result<Image> {
    let edge = load_edge_map(edge_path, Provenance::Measured)?;
    let ann = mask_path.map(PolygonAnnotation::load).transpose()?;
    let mask = match ann {
        Some(a) if !a.polygons.is_empty() || model.expects_mask() => Some(rasterize(&a, edge.width(), edge.height())?),
        _ => None,
    };
    Ok(model.infer(&edge, mask.as_ref())?)
}

/// PSNR of `result` against `truth`, resizing the truth when sizes differ.
pub fn psnr_against(truth: &Path, result: &Image) -> anyhow::Result<f64> {
    let mut t = load_image(truth)?;
    if (t.width(), t.height()) != (result.width(), result.height()) {
        t = t.resize(result.width(), result.height())?;
    }
    Ok(psnr(&t, result)?.db)
}

pub fn mask_id(ann: &PolygonAnnotation) -> String {
    hex::encode(Sha256::digest(ann.to_json().as_bytes()))[..16].to_string()
}

fn safe_ref(r: &str) -> bool {
    !r.is_empty()
        && !r.starts_with('.')
        && r.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

struct Shared {
    cfg: ServiceConfig,
    model: InferenceModel,
    jobs: Mutex<BTreeMap<String, JobRecord>>,
    next_id: AtomicU64,
    queue: mpsc::UnboundedSender<String>,
}

impl Shared {
    fn dir(&self, name: &str) -> PathBuf {
        self.cfg.storage.join(name)
    }

    fn persist(&self, rec: &JobRecord) -> anyhow::Result<()> {
        let path = self.dir("jobs").join(format!("{}.json", rec.job_id));
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(rec)?).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord) -> revenant_core::Result<()>) -> anyhow::Result<JobRecord> {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let rec = jobs.get_mut(id).with_context(|| format!("unknown job {id}"))?;
        f(rec)?;
        self.persist(rec)?;
        Ok(rec.clone())
    }

    fn execute(&self, rec: &JobRecord) -> anyhow::Result<(String, Option<f64>)> {
        let input = Path::new(rec.inputs.first().context("job has no input")?);
        let out = self.dir("results").join(format!("{}.png", rec.job_id));
        let image = match rec.kind {
            JobKind::Infer => translate_file(&self.model, input, rec.inputs.get(1).map(Path::new))?,
            JobKind::SrInfer => {
                let lr = load_image(input)?;
                let tiled = superresolve(&self.model, &lr, self.cfg.sr_stride, self.cfg.sr_endpoint, 1)?;
                let sidecar = out.with_extension("coverage.json");
                std::fs::write(&sidecar, serde_json::to_vec_pretty(&tiled.coverage)?)?;
                tiled.image
            }
        };
        image.save(&out)?;
        let truth = self
            .cfg
            .truth_dir
            .as_ref()
            .and_then(|d| input.file_name().map(|n| d.join(n)))
            .filter(|p| p.is_file());
        let score = truth.map(|t| psnr_against(&t, &image)).transpose()?;
        Ok((out.display().to_string(), score))
    }
}

/// A running job table with its worker pool.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    /// Loads the checkpoint, restores persisted jobs and spawns the workers.
    /// Must be called inside a Tokio runtime.
    pub fn start(cfg: ServiceConfig) -> anyhow::Result<Service> {
        let model = InferenceModel::load(&cfg.checkpoint)?;
        for d in ["masks", "jobs", "results"] {
            std::fs::create_dir_all(cfg.storage.join(d)).with_context(|| format!("creating storage {d}/"))?;
        }
        let mut jobs = BTreeMap::new();
        for entry in std::fs::read_dir(cfg.storage.join("jobs"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(&path)?;
                let rec: JobRecord =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                jobs.insert(rec.job_id.clone(), rec);
            }
        }
        let next = jobs
            .keys()
            .filter_map(|k| k.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()))
            .max()
            .map_or(1, |n| n + 1);
        let (tx, rx) = mpsc::unbounded_channel();
        let shared = Arc::new(Shared {
            cfg,
            model,
            jobs: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(next),
            queue: tx,
        });
        // Jobs interrupted by a shutdown run again; finished ones are kept as they are.
        for (id, rec) in jobs {
            let rec = if rec.state.is_terminal() {
                rec
            } else {
                let again = JobRecord::queued(id.clone(), rec.kind, rec.inputs);
                shared.persist(&again)?;
                shared.queue.send(id.clone()).expect("receiver alive");
                again
            };
            shared.jobs.lock().expect("job table poisoned").insert(id, rec);
        }
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..shared.cfg.workers.max(1) {
            tokio::spawn(worker(shared.clone(), rx.clone()));
        }
        tracing::info!(workers = shared.cfg.workers.max(1), step = shared.model.step(), "service ready");
        Ok(Service { shared })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/masks", post(post_mask))
            .route("/api/masks/{id}", get(get_mask))
            .route("/api/infer", post(post_infer))
            .route("/api/jobs/{id}", get(get_job))
            .route("/api/results/{id}", get(get_result))
            .route("/api/images/{image_ref}", get(get_image))
            .with_state(self.shared.clone())
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.shared.jobs.lock().expect("job table poisoned").get(id).cloned()
    }
}

async fn worker(shared: Arc<Shared>, rx: Arc<tokio::sync::Mutex<mpsc::UnboundedReceiver<String>>>) {
    loop {
        let Some(id) = rx.lock().await.recv().await else { break };
        let rec = match shared.update(&id, JobRecord::start) {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(job = %id, "cannot start job: {e:#}");
                continue;
            }
        };
        let s = shared.clone();
        let outcome = tokio::task::spawn_blocking(move || s.execute(&rec)).await;
        let result = match outcome {
            Ok(Ok((path, score))) => shared.update(&id, |r| r.finish(path, score)),
            Ok(Err(e)) => shared.update(&id, |r| r.fail(format!("{e:#}"))),
            Err(e) => shared.update(&id, |r| r.fail(format!("worker panicked: {e}"))),
        };
        match result {
            Ok(r) => tracing::info!(job = %id, state = ?r.state, "job finished"),
            Err(e) => tracing::error!(job = %id, "cannot record job outcome: {e:#}"),
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn post_mask(State(s): State<Arc<Shared>>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return error(StatusCode::BAD_REQUEST, "body must be UTF-8 JSON"),
    };
    let ann = match PolygonAnnotation::from_json(text) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let id = mask_id(&ann);
    let path = s.dir("masks").join(format!("{id}.json"));
    if !path.exists() {
        if let Err(e) = std::fs::write(&path, ann.to_json()) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
    }
    (StatusCode::CREATED, Json(serde_json::json!({ "mask_id": id }))).into_response()
}

async fn get_mask(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<String>) -> Response {
    if !id.chars().all(|c| c.is_ascii_hexdigit()) {
        return error(StatusCode::NOT_FOUND, format!("unknown mask {id}"));
    }
    match std::fs::read_to_string(s.dir("masks").join(format!("{id}.json"))) {
        Ok(text) => ([(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, format!("unknown mask {id}")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InferRequest {
    image_ref: String,
    #[serde(default)]
    mask_id: Option<String>,
}

async fn post_infer(State(s): State<Arc<Shared>>, body: Bytes) -> Response {
    let req: InferRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if !safe_ref(&req.image_ref) {
        return error(StatusCode::BAD_REQUEST, "image_ref: invalid reference");
    }
    let Some(image) = resolve_image(&s.cfg.images, &req.image_ref) else {
        return error(StatusCode::NOT_FOUND, format!("image_ref: unknown image {}", req.image_ref));
    };
    let kind = match s.model.superres_factor() {
        Some(_) => JobKind::SrInfer,
        None => JobKind::Infer,
    };
    let mut inputs = vec![image.display().to_string()];
    if let Some(m) = &req.mask_id {
        if kind == JobKind::SrInfer {
            return error(StatusCode::BAD_REQUEST, "mask_id: superresolution jobs take no mask");
        }
        let path = s.dir("masks").join(format!("{m}.json"));
        if !m.chars().all(|c| c.is_ascii_hexdigit()) || !path.is_file() {
            return error(StatusCode::NOT_FOUND, format!("mask_id: unknown mask {m}"));
        }
        inputs.push(path.display().to_string());
    }
    let id = format!("job-{:06}", s.next_id.fetch_add(1, Ordering::SeqCst));
    let rec = JobRecord::queued(id.clone(), kind, inputs);
    if let Err(e) = s.persist(&rec) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"));
    }
    s.jobs.lock().expect("job table poisoned").insert(id.clone(), rec.clone());
    if s.queue.send(id).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "job queue closed");
    }
    (StatusCode::ACCEPTED, Json(rec)).into_response()
}

fn resolve_image(dir: &Path, image_ref: &str) -> Option<PathBuf> {
    let direct = dir.join(image_ref);
    if direct.is_file() {
        return Some(direct);
    }
    let png = dir.join(format!("{image_ref}.png"));
    png.is_file().then_some(png)
}

async fn get_job(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<String>) -> Response {
    match s.jobs.lock().expect("job table poisoned").get(&id) {
        Some(rec) => Json(rec.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
    }
}

async fn get_result(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<String>) -> Response {
    let rec = s.jobs.lock().expect("job table poisoned").get(&id).cloned();
    let Some(rec) = rec else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    let Some(path) = rec.result else {
        return error(StatusCode::CONFLICT, format!("job {id} is {:?}", rec.state));
    };
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("tif" | "tiff") => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(s): State<Arc<Shared>>, UrlPath(image_ref): UrlPath<String>) -> Response {
    if !safe_ref(&image_ref) {
        return error(StatusCode::BAD_REQUEST, "image_ref: invalid reference");
    }
    let Some(path) = resolve_image(&s.cfg.images, &image_ref) else {
        return error(StatusCode::NOT_FOUND, format!("unknown image {image_ref}"));
    };
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Starts the service and serves until interrupted.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> anyhow::Result<()> {
    let service = Service::start(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refs_are_confined() {
        assert!(safe_ref("blob_0001.png"));
        assert!(!safe_ref("../secret"));
        assert!(!safe_ref(".hidden"));
        assert!(!safe_ref("a/b.png"));
        assert!(!safe_ref(""));
    }

    #[test]
    fn content_types() {
        assert_eq!(content_type(Path::new("a.PNG")), "image/png");
        assert_eq!(content_type(Path::new("a.jpeg")), "image/jpeg");
        assert_eq!(content_type(Path::new("a")), "application/octet-stream");
    }
}
