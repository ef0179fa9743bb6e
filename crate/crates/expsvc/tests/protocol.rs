use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fovea_core::analysis::Condition;
use fovea_core::data::SyntheticScenes;
use fovea_core::diffusion::SamplerConfig;
use fovea_core::foveation::{sample_random_fixations, FixationSequence, ImageBuffer};
use fovea_core::seeds;
use fovea_core::tensor::Mat;
use fovea_expsvc::*;

/// Tints the stimulus by a colour derived from the seed and fixations.
struct FakeGenerator {
    delay: Duration,
}

impl Generator for FakeGenerator {
    fn info(&self) -> GeneratorInfo {
        GeneratorInfo {
            checkpoint_sha256: Some("fake".into()),
            sampler: SamplerConfig::default(),
            blur_scale: 0.25,
            image_side: 64,
            patch_size: 4,
        }
    }

    fn generate(&self, stimulus: &ImageBuffer, fixes: &FixationSequence, condition: Condition, seed: u64) -> fovea_core::Result<ImageBuffer> {
        std::thread::sleep(self.delay);
        let mut path = vec![condition as u64];
        path.extend(fixes.points.iter().map(|f| (f.x * 1000.0 + f.y) as u64));
        let h = seeds::derive(seed, &path);
        let tint = [(h & 0xff) as f64 / 255.0, ((h >> 8) & 0xff) as f64 / 255.0, ((h >> 16) & 0xff) as f64 / 255.0];
        Ok(ImageBuffer::from_fn(stimulus.width(), stimulus.height(), |x, y| {
            let p = stimulus.rgb(x, y);
            [0.5 * (p[0] + tint[0]), 0.5 * (p[1] + tint[1]), 0.5 * (p[2] + tint[2])]
        }))
    }
}

fn stimuli() -> SyntheticStimuli {
    SyntheticStimuli {
        scenes: SyntheticScenes::new(3, 1000, 64),
        offset: 0,
        count: 1000,
    }
}

struct Harness {
    app: Router,
    state: AppState,
    _dir: tempfile::TempDir,
}

fn harness(delay_ms: u64, with_generator: bool) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let generator: Option<Arc<dyn Generator>> =
        with_generator.then(|| Arc::new(FakeGenerator { delay: Duration::from_millis(delay_ms) }) as Arc<dyn Generator>);
    let state = AppState::new(Arc::new(stimuli()), generator, dir.path(), 2).unwrap();
    Harness {
        app: router(state.clone()),
        state,
        _dir: dir,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn create(h: &Harness, cfg: Value) -> Value {
    let (status, _, body) = call(&h.app, "POST", "/sessions", Some(cfg)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    json_of(&body)
}

async fn fixate(h: &Harness, s: &str, t: u64, i: usize) -> (StatusCode, Value) {
    let body = json!({"x": 4.0 + 8.0 * i as f64, "y": 30.0, "t_ms": 300.0 * i as f64});
    let (status, _, bytes) = call(&h.app, "POST", &format!("/sessions/{s}/trials/{t}/fixations"), Some(body)).await;
    (status, json_of(&bytes))
}

async fn complete_viewing(h: &Harness, s: &str, t: u64, target: usize) {
    for i in 0..target {
        let (status, ack) = fixate(h, s, t, i).await;
        assert_eq!(status, StatusCode::OK, "{ack}");
    }
}

async fn wait_probe(h: &Harness, s: &str, t: u64) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    for _ in 0..500 {
        let r = call(&h.app, "GET", &format!("/sessions/{s}/trials/{t}/probe"), None).await;
        if r.0 != StatusCode::ACCEPTED {
            return r;
        }
        assert_eq!(json_of(&r.2)["status"], "pending");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("probe never became ready");
}

fn cfg(stimuli: &[usize], conditions: &[&str], counts: &[usize], seed: u64) -> Value {
    json!({"stimuli": stimuli, "conditions": conditions, "fixation_counts": counts, "seed": seed})
}

#[tokio::test]
async fn health_reports_version() {
    let h = harness(0, true);
    let (status, _, body) = call(&h.app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn sessions_are_unique_and_schedules_reproducible() {
    let h = harness(0, true);
    let c = cfg(&[5, 6, 7, 8, 9, 10], &["own-fixation", "random", "original"], &[1, 3], 42);
    let a = create(&h, c.clone()).await;
    let b = create(&h, c).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["trials"].as_array().unwrap().len(), 6);
    assert_eq!(a["trials"], b["trials"]);
    let mut ids: Vec<u64> = a["trials"].as_array().unwrap().iter().map(|t| t["stimulus"].as_u64().unwrap()).collect();
    ids.sort_unstable();
    assert_eq!(ids, vec![5, 6, 7, 8, 9, 10]);
    // the condition is not revealed to the client
    assert!(a["trials"][0].get("condition").is_none());
}

#[test]
fn schedule_is_counterbalanced() {
    let cfg = SessionConfig {
        stimuli: (0..30).collect(),
        conditions: vec![Condition::OwnFixation, Condition::Random, Condition::Original],
        fixation_counts: vec![1, 2, 3, 5, 10],
        seed: 9,
        ..Default::default()
    };
    let plan = build_schedule(&cfg);
    for c in &cfg.conditions {
        assert_eq!(plan.iter().filter(|p| p.condition == *c).count(), 10);
        for n in &cfg.fixation_counts {
            assert_eq!(plan.iter().filter(|p| p.condition == *c && p.fixation_target == *n).count(), 2);
        }
    }
    assert_ne!(build_schedule(&SessionConfig { seed: 10, ..cfg.clone() }), plan);
}

#[tokio::test]
async fn fixation_gating_completes_at_target() {
    let h = harness(0, true);
    let s = create(&h, cfg(&[1], &["own-fixation"], &[3], 1)).await;
    let id = s["session_id"].as_str().unwrap();
    let (_, a) = fixate(&h, id, 0, 0).await;
    let (_, b) = fixate(&h, id, 0, 1).await;
    let (_, c) = fixate(&h, id, 0, 2).await;
    assert_eq!((a["status"].as_str(), b["status"].as_str(), c["status"].as_str()), (Some("continue"), Some("continue"), Some("complete")));
    let (status, err) = fixate(&h, id, 0, 3).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "fixation-after-complete");
}

#[tokio::test]
async fn single_fixation_target_completes_immediately() {
    let h = harness(0, true);
    let s = create(&h, cfg(&[2], &["random"], &[1], 1)).await;
    let (status, ack) = fixate(&h, s["session_id"].as_str().unwrap(), 0, 0).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["status"], "complete");
}

#[tokio::test]
async fn full_trial_flow() {
    let h = harness(20, true);
    let s = create(&h, cfg(&[3, 4], &["own-fixation"], &[2], 5)).await;
    let id = s["session_id"].as_str().unwrap();

    let (status, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/response"), Some(json!({"response": "same", "rt_ms": 500.0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["code"], "probe-not-shown");

    complete_viewing(&h, id, 0, 2).await;
    let (status, headers, png) = wait_probe(&h, id, 0).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(headers["x-probe-ms"], "200");
    assert!(ImageBuffer::from_png_bytes(&png).is_ok());

    let (status, _, body) = call(&h.app, "GET", &format!("/sessions/{id}/trials/0/probe"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["code"], "probe-already-shown");

    let (status, err) = fixate(&h, id, 0, 5).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "fixation-during-probe");

    let (status, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/response"), Some(json!({"response": "same", "rt_ms": 740.0}))).await;
    assert_eq!(status, StatusCode::OK);
    let rec = json_of(&body);
    assert_eq!(rec["response"], "same");
    assert_eq!(rec["rt_ms"], 740.0);
    assert_eq!(rec["schema_version"], 1);
    assert_eq!(rec["image_sha256"].as_str().unwrap(), png_sha256(&png));

    let (status, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/response"), Some(json!({"response": "different", "rt_ms": 800.0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["code"], "duplicate-response");

    complete_viewing(&h, id, 1, 2).await;
    wait_probe(&h, id, 1).await;
    let (_, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/1/response"), Some(json!({"response": "same", "rt_ms": 10_001.0}))).await;
    let rec = json_of(&body);
    assert_eq!(rec["response"], "no-response");
    assert!(rec["rt_ms"].is_null());
}

#[tokio::test]
async fn budget_overrun_excludes_trial() {
    let h = harness(400, true);
    let mut c = cfg(&[1], &["own-fixation"], &[1], 2);
    c["generation_budget_ms"] = json!(50);
    let s = create(&h, c).await;
    let id = s["session_id"].as_str().unwrap();
    complete_viewing(&h, id, 0, 1).await;
    let (status, _, body) = wait_probe(&h, id, 0).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let err = json_of(&body);
    assert_eq!(err["code"], "budget-exceeded");
    assert_eq!(err["status"], 409);
    // the late job must not overwrite the flag
    tokio::time::sleep(Duration::from_millis(500)).await;
    let (_, _, body) = call(&h.app, "GET", &format!("/sessions/{id}/trials/0"), None).await;
    assert_eq!(json_of(&body)["phase"], "budget-exceeded");
    let events = read_log(h.state.log_path(id)).unwrap();
    let gens: Vec<&GenerationRecord> = events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Generation(g) => Some(g),
            _ => None,
        })
        .collect();
    assert_eq!(gens.len(), 1);
    assert!(gens[0].budget_exceeded && !gens[0].included());
}

#[tokio::test]
async fn within_budget_generation_is_included() {
    let h = harness(10, true);
    let mut c = cfg(&[1], &["own-fixation"], &[1], 2);
    c["generation_budget_ms"] = json!(5000);
    let s = create(&h, c).await;
    let id = s["session_id"].as_str().unwrap();
    complete_viewing(&h, id, 0, 1).await;
    assert_eq!(wait_probe(&h, id, 0).await.0, StatusCode::OK);
}

#[tokio::test]
async fn original_condition_passes_stimulus_through() {
    let h = harness(0, true);
    let s = create(&h, cfg(&[17], &["original"], &[1], 3)).await;
    let id = s["session_id"].as_str().unwrap();
    complete_viewing(&h, id, 0, 1).await;
    let (status, _, png) = wait_probe(&h, id, 0).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(png, stimuli().image(17).unwrap().to_png_bytes().unwrap());
    let (_, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/response"), Some(json!({"response": "same", "rt_ms": 600.0}))).await;
    assert_eq!(json_of(&body)["generation_ms"], 0.0);
}

#[tokio::test]
async fn random_condition_uses_seeded_fixations_of_target_count() {
    let h = harness(0, true);
    let s = create(&h, cfg(&[8], &["random"], &[5], 4)).await;
    let id = s["session_id"].as_str().unwrap();
    complete_viewing(&h, id, 0, 5).await;
    wait_probe(&h, id, 0).await;
    let (_, _, body) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/response"), Some(json!({"response": "different", "rt_ms": 900.0}))).await;
    let rec: TrialRecord = serde_json::from_slice(&body).unwrap();
    let expect = sample_random_fixations(5, 64, 4, random_fixation_seed(rec.generation.seed)).unwrap();
    let got = rec.generation.generation_fixations.unwrap();
    assert_eq!(got.points, expect.points);
    assert_ne!(got.points, rec.generation.fixations.points);
}

#[tokio::test]
async fn generated_conditions_need_a_generator() {
    let h = harness(0, false);
    let (status, _, body) = call(&h.app, "POST", "/sessions", Some(cfg(&[1], &["random"], &[1], 0))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let err = json_of(&body);
    assert_eq!(err["code"], "generator-unavailable");
    assert!(err["type"].as_str().unwrap().starts_with("urn:"));
    create(&h, cfg(&[1], &["original"], &[1], 0)).await;
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let h = harness(0, true);
    let (status, _, body) = call(&h.app, "POST", "/sessions", Some(cfg(&[], &["random"], &[1], 0))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json_of(&body)["code"], "invalid-request");
    let s = create(&h, cfg(&[1], &["random"], &[2], 0)).await;
    let id = s["session_id"].as_str().unwrap();
    let (status, _, _) = call(&h.app, "POST", &format!("/sessions/{id}/trials/0/fixations"), Some(json!({"x": 64.0, "y": 1.0, "t_ms": 0.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, body) = call(&h.app, "GET", "/sessions/nope/export", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["code"], "session-not-found");
    let (status, _, _) = call(&h.app, "GET", &format!("/sessions/{id}/trials/9/probe"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

async fn run_session(h: &Harness, n: usize, seed: u64) -> String {
    let stim: Vec<usize> = (100..100 + n).collect();
    let s = create(h, cfg(&stim, &["own-fixation", "random", "original", "foveal-only", "peripheral-only"], &[1, 2, 3], seed)).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    for t in s["trials"].as_array().unwrap() {
        let k = t["trial"].as_u64().unwrap();
        complete_viewing(h, &id, k, t["fixation_target"].as_u64().unwrap() as usize).await;
        assert_eq!(wait_probe(h, &id, k).await.0, StatusCode::OK);
        let resp = if k % 2 == 0 { "same" } else { "different" };
        let (status, _, _) = call(&h.app, "POST", &format!("/sessions/{id}/trials/{k}/response"), Some(json!({"response": resp, "rt_ms": 650.0}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    id
}

#[tokio::test]
async fn export_is_schema_valid_jsonl() {
    let h = harness(0, true);
    let id = run_session(&h, 10, 77).await;
    let (status, headers, body) = call(&h.app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "application/x-ndjson");
    let text = String::from_utf8(body).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 10 + 10);
    for l in &lines {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["schema_version"], 1);
        let _: LogEvent = serde_json::from_value(v).unwrap();
    }
    let events = read_log(h.state.log_path(&id)).unwrap();
    let table = judgments(&trial_records(&events));
    assert_eq!(table.len(), 10);
}

#[tokio::test]
async fn persisted_trials_regenerate_bit_identically() {
    let h = harness(0, true);
    let id = run_session(&h, 20, 5).await;
    let records = trial_records(&read_log(h.state.log_path(&id)).unwrap());
    assert_eq!(records.len(), 20);
    let fake = FakeGenerator { delay: Duration::ZERO };
    for r in &records {
        let png = regenerate(&r.generation, &stimuli(), Some(&fake)).unwrap();
        assert_eq!(Some(png_sha256(&png)), r.generation.image_sha256);
    }
}

#[tokio::test]
async fn torn_final_line_is_recoverable() {
    let h = harness(0, true);
    let id = run_session(&h, 3, 1).await;
    let path = h.state.log_path(&id);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"event\":\"response\",\"sess");
    std::fs::write(&path, text).unwrap();
    assert_eq!(trial_records(&read_log(&path).unwrap()).len(), 3);
}

#[test]
fn diverse_subset_cases() {
    let pts = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]]);
    for seed in 0..10 {
        let mut s = diverse_subset(&pts, 2, seed).unwrap();
        s.sort_unstable();
        // brute-force: the pair with the largest separation
        let mut best = (0, 0, -1.0);
        for i in 0..3 {
            for j in i + 1..3 {
                let d = (pts.get(i, 0) - pts.get(j, 0)).abs();
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        assert_eq!(s, vec![best.0, best.1]);
    }
    let mut all = diverse_subset(&pts, 3, 1).unwrap();
    all.sort_unstable();
    assert_eq!(all, vec![0, 1, 2]);
    assert!(diverse_subset(&pts, 4, 0).is_err());
    assert_eq!(diverse_subset(&pts, 2, 3).unwrap(), diverse_subset(&pts, 2, 3).unwrap());
}

#[test]
fn diverse_subset_scales_to_stimulus_counts() {
    let ds = SyntheticScenes::new(1, 400, 32);
    let rows: Vec<Vec<f64>> = (0..400).map(|i| fovea_core::metrics::embedding(&ds.image(i))).collect();
    let pick = diverse_subset(&Mat::from_rows(&rows), 300, 0).unwrap();
    let mut uniq = pick.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), 300);
}
