use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use tower::ServiceExt;

use revenant_cli::service::{translate_file, Service, ServiceConfig};
use revenant_core::engine::{load_pairs, InferenceModel, Task, Trainer};
use revenant_core::jobs::{JobKind, JobRecord, JobState};
use revenant_core::superres::EndpointMode;
use revenant_core::surrogate::{build_pairs, BuildOptions};
use revenant_core::{synth, RunConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    checkpoint: PathBuf,
    images: PathBuf,
    truth: PathBuf,
}

/// Trains a tiny checkpoint for 2 steps and lays out edge maps and truth.
fn fixture(channels: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let truth = root.join("truth");
    let masks = root.join("masks");
    synth::write_ambiguous_corpus(&truth, &masks, 4, 32, 2).unwrap();
    let opts = BuildOptions { masks_dir: Some(masks), ..BuildOptions::default() };
    let manifest = build_pairs(&truth, &root.join("pairs/manifest.jsonl"), &opts).unwrap();
    let mut cfg = RunConfig::desk(32, channels);
    cfg.generator.base_feature_width = 4;
    cfg.discriminators.base_feature_width = 4;
    cfg.discriminators.layer_count = 2;
    cfg.schedule.steps = 2;
    cfg.schedule.batch = 2;
    let data = load_pairs(&manifest, &cfg.generator, Task::Translation).unwrap();
    let mut trainer = Trainer::new(cfg.train_setup(Task::Translation), data).unwrap();
    let out = trainer.run(&root.join("run"), |_| {}).unwrap();
    let images = root.join("pairs/conditioning");
    Fixture { _dir: dir, checkpoint: out.checkpoint, images, truth, root }
}

fn config(f: &Fixture, storage: &Path, workers: usize) -> ServiceConfig {
    ServiceConfig {
        checkpoint: f.checkpoint.clone(),
        storage: storage.to_path_buf(),
        images: f.images.clone(),
        truth_dir: Some(f.truth.clone()),
        workers,
        sr_stride: 64,
        sr_endpoint: EndpointMode::InclusiveCover,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>, Option<String>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec(), ctype)
}

async fn json(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, serde_json::Value) {
    let (status, bytes, _) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn wait_done(app: &Router, id: &str) -> JobRecord {
    for _ in 0..600 {
        let (status, v) = json(app, "GET", &format!("/api/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let rec: JobRecord = serde_json::from_value(v).unwrap();
        if rec.state.is_terminal() {
            return rec;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}

const TRIANGLE: &str =
    r#"{"image_ref":"blob_0000","polygons":[{"category":"wings","vertices":[[2,2],[28,3],[14,27]],"z_order":0}]}"#;

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mask_validation_and_lookup() {
    let f = fixture(5);
    let storage = f.root.join("storage");
    let app = Service::start(config(&f, &storage, 1)).unwrap().router();

    let bad = r#"{"image_ref":"x","polygons":[{"category":"skin","vertices":[[0,0],[5,5]],"z_order":0}]}"#;
    let (status, v) = json(&app, "POST", "/api/masks", Some(bad.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("polygons[0].vertices"), "{v}");

    let (status, v) = json(&app, "POST", "/api/masks", Some("{\"polygons\": 3}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");

    let (status, v) = json(&app, "POST", "/api/masks", Some(TRIANGLE.into())).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = v["mask_id"].as_str().unwrap().to_string();
    let (_, again) = json(&app, "POST", "/api/masks", Some(TRIANGLE.into())).await;
    assert_eq!(again["mask_id"], id.as_str());
    let (status, doc) = json(&app, "GET", &format!("/api/masks/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["polygons"][0]["vertices"][2], serde_json::json!([14.0, 27.0]));

    let (status, _) = json(&app, "GET", "/api/jobs/job-999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json(&app, "GET", "/api/results/job-999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json(&app, "POST", "/api/infer", Some(r#"{"image_ref":"nope.png"}"#.into())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json(&app, "POST", "/api/infer", Some(r#"{"image_ref":"../x"}"#.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, bytes, ctype) = call(&app, "GET", "/api/images/blob_0001.png", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(bytes, std::fs::read(f.images.join("blob_0001.png")).unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn infer_job_lifecycle_and_contract() {
    let f = fixture(5);
    let storage = f.root.join("storage");
    let app = Service::start(config(&f, &storage, 1)).unwrap().router();
    let (_, v) = json(&app, "POST", "/api/masks", Some(TRIANGLE.into())).await;
    let mask_id = v["mask_id"].as_str().unwrap().to_string();

    let body = format!(r#"{{"image_ref":"blob_0000","mask_id":"{mask_id}"}}"#);
    let (status, v) = json(&app, "POST", "/api/infer", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(v["kind"], "infer");
    let id = v["job_id"].as_str().unwrap().to_string();
    let rec = wait_done(&app, &id).await;
    assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
    assert!(rec.psnr_db.is_some_and(f64::is_finite));

    let (status, bytes, ctype) = call(&app, "GET", &format!("/api/results/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let img = image_dims(&bytes);
    assert_eq!(img, (32, 32));

    // The mask-conditioned checkpoint refuses to run without a mask.
    let (_, v) = json(&app, "POST", "/api/infer", Some(r#"{"image_ref":"blob_0000"}"#.into())).await;
    let rec = wait_done(&app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(rec.state, JobState::Failed);
    assert!(rec.error.unwrap().contains("mask is required"));
}

fn image_dims(png: &[u8]) -> (u32, u32) {
    // IHDR width and height sit at fixed offsets in every PNG.
    assert_eq!(&png[1..4], b"PNG");
    let w = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(png[20..24].try_into().unwrap());
    (w, h)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 3)]
async fn concurrent_jobs_match_sequential_inference() {
    let f = fixture(1);
    let storage = f.root.join("storage");
    let app = Service::start(config(&f, &storage, 2)).unwrap().router();
    let refs = ["blob_0000.png", "blob_0001.png", "blob_0002.png", "blob_0003.png"];
    let posts = refs.iter().map(|r| {
        let app = app.clone();
        let body = format!(r#"{{"image_ref":"{r}"}}"#);
        async move { json(&app, "POST", "/api/infer", Some(body)).await.1["job_id"].as_str().unwrap().to_string() }
    });
    let ids: Vec<String> = futures_join(posts).await;
    let model = InferenceModel::load(&f.checkpoint).unwrap();
    for (r, id) in refs.iter().zip(&ids) {
        let rec = wait_done(&app, id).await;
        assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
        let served = revenant_core::imaging::load_image(rec.result.unwrap()).unwrap();
        let sequential = translate_file(&model, &f.images.join(r), None).unwrap();
        assert_eq!(served, sequential, "{r}");
    }
}

async fn futures_join<F: std::future::Future<Output = String> + Send + 'static>(
    futs: impl Iterator<Item = F>,
) -> Vec<String> {
    let handles: Vec<_> = futs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_keeps_finished_jobs_and_reruns_interrupted_ones() {
    let f = fixture(1);
    let storage = f.root.join("storage");
    let done_id = {
        let app = Service::start(config(&f, &storage, 1)).unwrap().router();
        let (_, v) = json(&app, "POST", "/api/infer", Some(r#"{"image_ref":"blob_0002"}"#.into())).await;
        let id = v["job_id"].as_str().unwrap().to_string();
        assert_eq!(wait_done(&app, &id).await.state, JobState::Done);
        id
    };
    // Simulate a job left running by a crash.
    let mut stuck = JobRecord::queued("job-000007", JobKind::Infer, vec![f.images.join("blob_0003.png").display().to_string()]);
    stuck.start().unwrap();
    std::fs::write(storage.join("jobs/job-000007.json"), serde_json::to_vec(&stuck).unwrap()).unwrap();

    let service = Service::start(config(&f, &storage, 1)).unwrap();
    let app = service.router();
    let kept = wait_done(&app, &done_id).await;
    assert_eq!(kept.state, JobState::Done);
    assert_eq!(wait_done(&app, "job-000007").await.state, JobState::Done);
    let (_, v) = json(&app, "POST", "/api/infer", Some(r#"{"image_ref":"blob_0000"}"#.into())).await;
    assert_eq!(v["job_id"], "job-000008");
}
