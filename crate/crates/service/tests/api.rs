use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satsynth::diffusion::{DiffusionConfig, ModelState};
use satsynth::image::{decode_png_gray, decode_png_rgb, encode_png_gray, encode_png_rgb, sha256_hex, Bitmap};
use satsynth::ingest::{Layer, LayerPalette};
use satsynth::pipelines::{edit_mask, GenerativeModel};
use satsynth_service::{router, Models, Service, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const CITIES: [&str; 2] = ["lisbon", "osaka"];
const RES: usize = 32;

fn tiny(in_channels: usize, aux: usize, seed: u64) -> ModelState<f32> {
    let cfg = DiffusionConfig {
        resolution: RES,
        base_channels: 4,
        channel_mult: vec![1, 2],
        in_channels,
        class_count: CITIES.len() + 1,
        aux_class_count: 0,
        cfg_dropout: 0.1,
    }
    .with_aux_classes(aux);
    let mut st = ModelState::<f32>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in st.params.iter_mut() {
        *p = rng.random_range(-0.2..0.2);
    }
    st
}

fn models(steps: usize, with_basemap: bool) -> Models {
    let names: Vec<String> = CITIES.iter().map(|s| s.to_string()).collect();
    let image = GenerativeModel::new("img", tiny(6, 0, 1), steps, names.clone()).unwrap();
    let basemap = with_basemap.then(|| GenerativeModel::new("bm", tiny(3, 2, 2), steps, names).unwrap());
    Models::new(image, basemap)
}

fn open(root: &Path, steps: usize, with_basemap: bool) -> Router {
    let mut cfg = ServiceConfig::new(root);
    cfg.workers = 2;
    router(Service::open(cfg, models(steps, with_basemap)).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or_else(|e| panic!("{uri}: {e}: {}", String::from_utf8_lossy(&b))))
}

async fn wait_job(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (s, j) = call_json(app, "GET", &format!("/v1/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if j["status"] == "done" || j["status"] == "failed" {
            return j;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

async fn artifact_rgb(app: &Router, digest: &str) -> RgbImage {
    let (s, bytes) = call(app, "GET", &format!("/v1/artifacts/{digest}"), None).await;
    assert_eq!(s, StatusCode::OK);
    decode_png_rgb(&bytes).unwrap()
}

async fn artifact_mask(app: &Router, digest: &str) -> Bitmap {
    let (s, bytes) = call(app, "GET", &format!("/v1/artifacts/{digest}"), None).await;
    assert_eq!(s, StatusCode::OK);
    Bitmap::from_gray(&decode_png_gray(&bytes).unwrap())
}

async fn new_session(app: &Router, city: &str, seed: u64) -> Value {
    let (s, v) = call_json(app, "POST", "/v1/sessions", Some(json!({"city": city, "seed": seed}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

async fn submit(app: &Router, session: &str, basemap: &RgbImage) -> Value {
    let body = json!({"basemap_png": b64(&encode_png_rgb(basemap))});
    let (s, v) = call_json(app, "POST", &format!("/v1/sessions/{session}/edits"), Some(body)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    v
}

fn paint(img: &RgbImage, layer: Layer, x0: u32, y0: u32, side: u32) -> RgbImage {
    let c = LayerPalette::default().color(layer);
    let mut out = img.clone();
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            out.put_pixel(x, y, c);
        }
    }
    out
}

#[tokio::test]
async fn meta_lists_cities_palette_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = models(4, true);
    let hash = m.checkpoint_hash.clone();
    let app = router(Service::open(ServiceConfig::new(dir.path()), m).unwrap());
    let (s, meta) = call_json(&app, "GET", "/v1/meta", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["cities"], json!(CITIES));
    assert_eq!(meta["checkpoint_hash"], json!(hash));
    assert_eq!(meta["palette"].as_array().unwrap().len(), Layer::ALL.len());
    assert_eq!(meta["palette"][4], json!({"layer": "water", "rgb": [90, 150, 220]}));
    assert_eq!(meta["manipulation_classes"], json!(["BuildingsRoads", "GreenspaceWater"]));
    assert_eq!(meta["resolution"], json!(RES));
    let (s, _) = call(&app, "GET", "/meta", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "routes live under /v1 only");
}

#[tokio::test]
async fn valid_city_gives_an_empty_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let created = new_session(&app, "lisbon", 3).await;
    assert_eq!(created["stage_count"], 0);
    let id = created["id"].as_str().unwrap();
    let (s, got) = call_json(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got, created);
    assert_eq!(got["stages"], json!([]));
    let basemap = artifact_rgb(&app, got["current_basemap"].as_str().unwrap()).await;
    assert_eq!(basemap.dimensions(), (RES as u32, RES as u32));
    assert!(basemap.pixels().all(|p| LayerPalette::default().contains(p)));
}

#[tokio::test]
async fn unknown_city_is_named_with_the_known_list() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let (s, v) = call_json(&app, "POST", "/v1/sessions", Some(json!({"city": "atlantis"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let e = &v["error"];
    assert_eq!(e["category"], "unknown_city");
    assert_eq!(e["city"], "atlantis");
    assert_eq!(e["known"], json!(CITIES));
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("atlantis") && msg.contains("lisbon") && msg.contains("osaka"), "{msg}");
}

#[tokio::test]
async fn sessions_of_one_city_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let a = new_session(&app, "osaka", 5).await;
    let b = new_session(&app, "osaka", 5).await;
    let (ida, idb) = (a["id"].as_str().unwrap(), b["id"].as_str().unwrap());
    assert_ne!(ida, idb);
    let base = artifact_rgb(&app, a["current_basemap"].as_str().unwrap()).await;
    let job = submit(&app, ida, &paint(&base, Layer::Water, 4, 4, 6)).await;
    assert_eq!(wait_job(&app, job["id"].as_str().unwrap()).await["status"], "done");
    let (_, a2) = call_json(&app, "GET", &format!("/v1/sessions/{ida}"), None).await;
    let (_, b2) = call_json(&app, "GET", &format!("/v1/sessions/{idb}"), None).await;
    assert_eq!(a2["stage_count"], 1);
    assert_eq!(b2, b);
}

#[tokio::test]
async fn identity_edit_yields_an_empty_mask() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let s = new_session(&app, "lisbon", 1).await;
    let id = s["id"].as_str().unwrap();
    let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let job = submit(&app, id, &base).await;
    assert_eq!(job["status"], "queued");
    assert_eq!(job["kind"], "edit_step");
    let done = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    let a = &done["artifacts"];
    assert_eq!(a["empty_mask"], true);
    assert_eq!(a["stage_index"], 0);
    assert!(artifact_mask(&app, a["mask"].as_str().unwrap()).await.none_set());
    assert_eq!(a["image"], s["current_image"], "image unchanged");
}

#[tokio::test]
async fn edit_masks_match_the_dilated_diff_and_replay_reproduces_images() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 8, false);
    let margin = ServiceConfig::new(dir.path()).edit_margin;
    let first = new_session(&app, "lisbon", 11).await;
    let id = first["id"].as_str().unwrap();
    let mut prev = artifact_rgb(&app, first["current_basemap"].as_str().unwrap()).await;
    let edits = [(Layer::Water, 2, 2, 6), (Layer::Buildings, 20, 8, 5), (Layer::Greenspace, 10, 22, 7)];
    let mut sequence = Vec::new();
    let mut images = Vec::new();
    for (k, &(layer, x, y, side)) in edits.iter().enumerate() {
        let edited = paint(&prev, layer, x, y, side);
        let done = wait_job(&app, submit(&app, id, &edited).await["id"].as_str().unwrap()).await;
        assert_eq!(done["status"], "done", "{done}");
        let a = &done["artifacts"];
        assert_eq!(a["stage_index"], k);
        let want = edit_mask(&prev, &edited, margin);
        assert!(!want.none_set());
        let want_digest = sha256_hex(&encode_png_gray(&want.to_gray()));
        assert_eq!(a["mask"], json!(want_digest), "stage {k}");
        assert_eq!(artifact_rgb(&app, a["basemap"].as_str().unwrap()).await, edited);
        images.push(a["image"].clone());
        sequence.push(edited.clone());
        prev = edited;
    }
    let (_, s) = call_json(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(s["stage_count"], 3);

    let replay = new_session(&app, "lisbon", 11).await;
    assert_eq!(replay["current_image"], first["current_image"]);
    let rid = replay["id"].as_str().unwrap();
    for (k, edited) in sequence.iter().enumerate() {
        let done = wait_job(&app, submit(&app, rid, edited).await["id"].as_str().unwrap()).await;
        assert_eq!(done["artifacts"]["image"], images[k], "replayed stage {k}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rapid_submits_run_in_submission_order() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 200, false);
    let s = new_session(&app, "osaka", 2).await;
    let id = s["id"].as_str().unwrap();
    let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let e1 = paint(&base, Layer::Water, 0, 0, 8);
    let e2 = paint(&e1, Layer::Roads, 16, 16, 8);
    let j1 = submit(&app, id, &e1).await;
    let j2 = submit(&app, id, &e2).await;
    let d1 = wait_job(&app, j1["id"].as_str().unwrap()).await;
    let d2 = wait_job(&app, j2["id"].as_str().unwrap()).await;
    assert_eq!((d1["status"].as_str(), d2["status"].as_str()), (Some("done"), Some("done")));
    let t1 = &d1["timeline"];
    let t2 = &d2["timeline"];
    assert!(t2["queued_ms"].as_u64() >= t1["queued_ms"].as_u64());
    assert!(
        t2["started_ms"].as_u64().unwrap() >= t1["finished_ms"].as_u64().unwrap(),
        "second edit started before the first finished: {t1} {t2}"
    );
    assert_eq!(d1["artifacts"]["stage_index"], 0);
    assert_eq!(d2["artifacts"]["stage_index"], 1);
    // The second edit was applied on top of the first stage.
    let mask2 = artifact_mask(&app, d2["artifacts"]["mask"].as_str().unwrap()).await;
    assert_eq!(mask2, edit_mask(&e1, &e2, ServiceConfig::new(dir.path()).edit_margin));
}

#[tokio::test]
async fn malformed_payloads_fail_without_touching_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let s = new_session(&app, "lisbon", 4).await;
    let id = s["id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/edits");

    let (st, job) = call_json(&app, "POST", &uri, Some(json!({"basemap_png": "%%% not base64"}))).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["category"], "decode");

    let (_, job) = call_json(&app, "POST", &uri, Some(json!({"basemap_png": b64(b"GIF89a not a png")}))).await;
    assert_eq!(job["error"]["category"], "decode");

    let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let mut dirty = base.clone();
    dirty.put_pixel(3, 5, Rgb([1, 2, 3]));
    dirty.put_pixel(7, 0, Rgb([250, 0, 0]));
    let job = submit(&app, id, &dirty).await;
    assert_eq!(job["status"], "failed");
    let e = &job["error"];
    assert_eq!(e["category"], "non_palette");
    assert_eq!(e["pixels"]["offending"], 2);
    assert_eq!(e["pixels"]["samples"], json!([[7, 0, 250, 0, 0], [3, 5, 1, 2, 3]]));
    assert!(job.get("artifacts").is_none());

    let small = RgbImage::from_pixel(8, 8, LayerPalette::default().color(Layer::Background));
    assert_eq!(submit(&app, id, &small).await["error"]["category"], "shape");

    let (_, after) = call_json(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(after, s);
    let polled = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(polled, job);
}

#[tokio::test]
async fn done_jobs_and_artifacts_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let s = new_session(&app, "lisbon", 8).await;
    let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let job = submit(&app, s["id"].as_str().unwrap(), &paint(&base, Layer::Airports, 9, 9, 9)).await;
    let jid = job["id"].as_str().unwrap();
    wait_job(&app, jid).await;
    let (_, a) = call(&app, "GET", &format!("/v1/jobs/{jid}"), None).await;
    let (_, b) = call(&app, "GET", &format!("/v1/jobs/{jid}"), None).await;
    assert_eq!(a, b);
    let done: Value = serde_json::from_slice(&a).unwrap();
    for key in ["image", "mask", "basemap"] {
        let digest = done["artifacts"][key].as_str().unwrap();
        let (s1, raw1) = call(&app, "GET", &format!("/v1/artifacts/{digest}"), None).await;
        let (_, raw2) = call(&app, "GET", &format!("/v1/artifacts/{digest}"), None).await;
        assert_eq!(s1, StatusCode::OK);
        assert_eq!(raw1, raw2);
        assert_eq!(sha256_hex(&raw1), digest, "content addressed");
        let (_, enc) = call_json(&app, "GET", &format!("/v1/artifacts/{digest}?encoding=base64"), None).await;
        assert_eq!(enc["png_base64"], json!(b64(&raw1)));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unfinished_jobs_expose_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 1500, false);
    let s = new_session(&app, "lisbon", 9).await;
    let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let job = submit(&app, s["id"].as_str().unwrap(), &paint(&base, Layer::Water, 0, 0, 16)).await;
    let uri = format!("/v1/jobs/{}", job["id"].as_str().unwrap());
    let mut seen = Vec::new();
    loop {
        let (_, j) = call_json(&app, "GET", &uri, None).await;
        let status = j["status"].as_str().unwrap().to_string();
        if status != "done" {
            assert!(j.get("artifacts").is_none(), "{j}");
        }
        if seen.last() != Some(&status) {
            seen.push(status.clone());
        }
        if status == "done" || status == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    assert!(seen.iter().any(|s| s == "running"), "{seen:?}");
    assert_eq!(seen.last().unwrap(), "done");
    let order = ["queued", "running", "done"];
    let ranks: Vec<usize> = seen.iter().map(|s| order.iter().position(|o| o == s).unwrap()).collect();
    assert!(ranks.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
}

#[tokio::test]
async fn unknown_ids_and_bad_digests_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, false);
    let (s, v) = call_json(&app, "GET", "/v1/jobs/nope", None).await;
    assert_eq!((s, &v["error"]["category"]), (StatusCode::NOT_FOUND, &json!("not_found")));
    let (s, _) = call_json(&app, "GET", "/v1/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let body = json!({"basemap_png": ""});
    let (s, _) = call_json(&app, "POST", "/v1/sessions/nope/edits", Some(body)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call_json(&app, "GET", "/v1/artifacts/xyz", None).await;
    assert_eq!((s, &v["error"]["category"]), (StatusCode::BAD_REQUEST, &json!("digest")));
    let (s, _) = call_json(&app, "GET", &format!("/v1/artifacts/{}", "0".repeat(64)), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn restart_keeps_sessions_jobs_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (sid, done) = {
        let app = open(dir.path(), 4, false);
        let s = new_session(&app, "osaka", 6).await;
        let sid = s["id"].as_str().unwrap().to_string();
        let base = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
        let job = submit(&app, &sid, &paint(&base, Layer::Highways, 3, 3, 5)).await;
        (sid, wait_job(&app, job["id"].as_str().unwrap()).await)
    };
    // A job left running by a crashed process.
    let mut stale = done.clone();
    stale["id"] = json!("stale");
    stale["status"] = json!("running");
    stale.as_object_mut().unwrap().remove("artifacts");
    std::fs::write(dir.path().join("service/jobs/stale.json"), stale.to_string()).unwrap();

    let app = open(dir.path(), 4, false);
    let (_, again) = call_json(&app, "GET", &format!("/v1/jobs/{}", done["id"].as_str().unwrap()), None).await;
    assert_eq!(again, done);
    let (_, s) = call_json(&app, "GET", &format!("/v1/sessions/{sid}"), None).await;
    assert_eq!(s["stage_count"], 1);
    assert_eq!(s["current_image"], done["artifacts"]["image"]);
    let prev = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let (_, st) = call_json(&app, "GET", "/v1/jobs/stale", None).await;
    assert_eq!(st["status"], "failed");
    assert_eq!(st["error"]["category"], "interrupted");

    let next = paint(&prev, Layer::Water, 20, 20, 6);
    let d = wait_job(&app, submit(&app, &sid, &next).await["id"].as_str().unwrap()).await;
    assert_eq!(d["artifacts"]["stage_index"], 1);
    let mask = artifact_mask(&app, d["artifacts"]["mask"].as_str().unwrap()).await;
    assert_eq!(mask, edit_mask(&prev, &next, ServiceConfig::new(dir.path()).edit_margin));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path().join("service/artifacts"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.ends_with(".png"))
        .collect();
    assert!(leftovers.is_empty(), "temporary files left behind: {leftovers:?}");
}

#[tokio::test]
async fn generation_jobs_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 4, true);
    let s = new_session(&app, "lisbon", 7).await;
    let sat = artifact_rgb(&app, s["current_image"].as_str().unwrap()).await;
    let map = artifact_rgb(&app, s["current_basemap"].as_str().unwrap()).await;
    let mut mask = Bitmap::new(RES, RES);
    for y in 8..14 {
        for x in 10..16 {
            mask.set(x, y, true);
        }
    }
    let mask_png = b64(&encode_png_gray(&mask.to_gray()));

    let req = json!({"kind": "sample", "city": "osaka", "seed": 1});
    let (st, job) = call_json(&app, "POST", "/v1/jobs", Some(req)).await;
    assert_eq!(st, StatusCode::ACCEPTED, "{job}");
    let d = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(d["status"], "done", "{d}");
    assert!(d["artifacts"]["basemap"].is_string(), "generated basemap published");

    let req = json!({"kind": "inpaint", "city": "lisbon", "seed": 2, "image_png": b64(&encode_png_rgb(&sat)),
        "mask_png": mask_png, "basemap_png": b64(&encode_png_rgb(&map))});
    let (_, job) = call_json(&app, "POST", "/v1/jobs", Some(req)).await;
    let d = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(d["kind"], "inpaint");
    let out = artifact_rgb(&app, d["artifacts"]["image"].as_str().unwrap()).await;
    for (i, (a, b)) in out.pixels().zip(sat.pixels()).enumerate() {
        if !mask.bits[i] {
            assert_eq!(a, b, "pixel {i} outside the mask changed");
        }
    }

    let req = json!({"kind": "two_stage", "city": "lisbon", "seed": 3, "image_png": b64(&encode_png_rgb(&sat)),
        "basemap_png": b64(&encode_png_rgb(&map)), "mask_png": mask_png, "manip_class": "GreenspaceWater"});
    let (_, job) = call_json(&app, "POST", "/v1/jobs", Some(req.clone())).await;
    let d = wait_job(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(d["status"], "done", "{d}");
    let bm = artifact_rgb(&app, d["artifacts"]["basemap"].as_str().unwrap()).await;
    assert!(bm.pixels().all(|p| LayerPalette::default().contains(p)));
    let (_, job2) = call_json(&app, "POST", "/v1/jobs", Some(req)).await;
    assert_eq!(job2["inputs_digest"], job["inputs_digest"]);
    let d2 = wait_job(&app, job2["id"].as_str().unwrap()).await;
    assert_eq!(d2["artifacts"], d["artifacts"], "same inputs, same artifacts");

    let (st, v) = call_json(&app, "POST", "/v1/jobs", Some(json!({"kind": "sample", "city": "rome", "seed": 1}))).await;
    assert_eq!((st, &v["error"]["category"]), (StatusCode::UNPROCESSABLE_ENTITY, &json!("unknown_city")));
    let (st, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "upscale", "city": "lisbon", "seed": 1}))).await;
    assert!(st.is_client_error());

    let other = tempfile::tempdir().unwrap();
    let no_bm = open(other.path(), 4, false);
    let req = json!({"kind": "two_stage", "city": "lisbon", "seed": 3, "image_png": "", "basemap_png": "",
        "mask_png": "", "manip_class": "BuildingsRoads"});
    let (st, v) = call_json(&no_bm, "POST", "/v1/jobs", Some(req)).await;
    assert_eq!((st, &v["error"]["category"]), (StatusCode::BAD_REQUEST, &json!("unsupported")));
}
