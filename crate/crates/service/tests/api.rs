use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use regabstract_core::corpus::{generate_corpus, CorpusBundle, GeneratorConfig};
use regabstract_core::model::{checkpoint_file_name, save_checkpoint, EncoderKind, Model, ModelConfig};
use regabstract_core::textproc::learn_vocab;
use regabstract_service::*;

fn bundle() -> CorpusBundle {
    generate_corpus(&GeneratorConfig {
        n_cancer_patients: 8,
        n_control_patients: 2,
        n_site_classes: 4,
        n_histology_classes: 4,
        pretrain_pool_docs: 0,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn open_store(log: &Path) -> Arc<Store> {
    let b = bundle();
    let xs = extract_all(&b, &Predictors::ontology_only()).unwrap();
    Arc::new(Store::open(b, xs, log).unwrap())
}

struct Fixture {
    _dir: tempfile::TempDir,
    log: PathBuf,
    store: Arc<Store>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let store = open_store(&log);
    let app = router(store.clone(), None);
    Fixture { _dir: dir, log, store, app }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Value) {
    let (s, h, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    let v = if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap_or(Value::Null) };
    (s, h, v)
}

async fn post_verdict(app: &Router, id: &str, reviewer: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::post(format!("/api/extractions/{id}/verdict")).header("content-type", "application/json");
    if let Some(r) = reviewer {
        req = req.header(REVIEWER_HEADER, r);
    }
    let (s, _, b) = call(app, req.body(Body::from(body.to_string())).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn total(h: &axum::http::HeaderMap) -> usize {
    h[TOTAL_COUNT_HEADER].to_str().unwrap().parse().unwrap()
}

fn log_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap_or_default().lines().count()
}

fn first_ids(f: &Fixture, n: usize) -> Vec<String> {
    f.store.queue(&QueueFilter::default(), 1, n).0.into_iter().map(|i| i.extraction_id).collect()
}

#[tokio::test]
async fn fresh_queue_has_every_patient_attribute_pending() {
    let f = fixture();
    let (s, h, v) = get(&f.app, "/api/queue").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(total(&h), 80);
    assert_eq!(v.as_array().unwrap().len(), DEFAULT_PAGE_SIZE);
    let (_, h, v) = get(&f.app, "/api/queue?page=2&status=pending").await;
    assert_eq!((total(&h), v.as_array().unwrap().len()), (80, 30));
    let (s, h, v) = get(&f.app, "/api/queue?page=3").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((total(&h), v.as_array().unwrap().len()), (80, 0));
    let (_, h, v) = get(&f.app, "/api/queue?status=accepted").await;
    assert_eq!((total(&h), v.as_array().unwrap().len()), (0, 0));
    let (_, h, _) = get(&f.app, "/api/queue?attribute=site").await;
    assert_eq!(total(&h), 10);
}

#[tokio::test]
async fn queue_order_is_patient_then_attribute() {
    let f = fixture();
    let (_, _, v) = get(&f.app, "/api/queue?page_size=500").await;
    let keys: Vec<(String, String)> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|i| (i["patient_id"].as_str().unwrap().to_string(), i["extraction_id"].as_str().unwrap().to_string()))
        .collect();
    let patients: Vec<&String> = keys.iter().map(|k| &k.0).collect();
    let mut sorted = patients.clone();
    sorted.sort();
    assert_eq!(patients, sorted);
    assert!(keys[0].1.ends_with(":site"));
}

#[tokio::test]
async fn bad_queue_filters_are_400_with_error_body() {
    let f = fixture();
    for uri in ["/api/queue?attribute=grade", "/api/queue?status=done", "/api/queue?page=0", "/api/queue?page=x"] {
        let (s, _, v) = get(&f.app, uri).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(v["code"], "bad_request");
        assert!(v["message"].is_string());
    }
}

#[tokio::test]
async fn patient_view_has_documents_and_all_extractions() {
    let f = fixture();
    let id = f.store.corpus().patients[0].patient_id.clone();
    let (s, _, v) = get(&f.app, &format!("/api/patients/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["extractions"].as_array().unwrap().len(), 8);
    let docs = v["documents"].as_array().unwrap();
    assert_eq!(docs.len(), f.store.corpus().patients[0].documents.len());
    assert_eq!(docs[0]["text"], f.store.corpus().patients[0].documents[0].text);
    let (s, _, v) = get(&f.app, "/api/patients/nobody").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
}

#[tokio::test]
async fn verdicts_update_items_and_validate_labels() {
    let f = fixture();
    let ids = first_ids(&f, 2);
    let (s, v) = post_verdict(&f.app, &ids[0], Some("r1"), json!({"event_id": "e1", "verdict": "accept"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "accepted");
    assert_eq!(v["reviewer_id"], "r1");

    let before = f.store.item(&ids[1]).unwrap();
    let (s, v) = post_verdict(&f.app, &ids[1], Some("r1"), json!({"event_id": "e2", "verdict": "correct", "corrected_label": "C99.9"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_verdict");
    assert_eq!(f.store.item(&ids[1]).unwrap(), before);
    let (s, _) = post_verdict(&f.app, &ids[1], Some("r1"), json!({"event_id": "e3", "verdict": "correct"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_verdict(&f.app, &ids[1], Some("r1"), json!({"event_id": "e4", "verdict": "maybe"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_verdict(&f.app, &ids[1], None, json!({"event_id": "e5", "verdict": "accept"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_verdict(&f.app, "nobody:site", Some("r1"), json!({"event_id": "e6", "verdict": "accept"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let req = Request::post(format!("/api/extractions/{}/verdict", ids[1]))
        .header(REVIEWER_HEADER, "r1")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(call(&f.app, req).await.0, StatusCode::BAD_REQUEST);

    let space = f.store.label_space(before.attribute).classes.clone();
    let label = space.iter().find(|c| **c != before.predicted).unwrap().clone();
    let (s, v) = post_verdict(&f.app, &ids[1], Some("r2"), json!({"event_id": "e7", "verdict": "correct", "corrected_label": label})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "corrected");
    assert_eq!(v["corrected_label"], label.as_str());
    assert_eq!(log_lines(&f.log), 2);
}

#[tokio::test]
async fn duplicate_event_id_appends_once() {
    let f = fixture();
    let id = first_ids(&f, 1).remove(0);
    let body = json!({"event_id": "same", "verdict": "accept"});
    let (s1, v1) = post_verdict(&f.app, &id, Some("r1"), body.clone()).await;
    let (s2, v2) = post_verdict(&f.app, &id, Some("r1"), body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(v1, v2);
    assert_eq!(log_lines(&f.log), 1);
}

/// Final status per extraction from the raw log, latest verdict winning.
fn replay_oracle(log: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in std::fs::read_to_string(log).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["kind"] == "verdict" {
            let status = if v["payload"]["verdict"] == "accept" { "accepted" } else { "corrected" };
            out.insert(v["payload"]["extraction_id"].as_str().unwrap().to_string(), status.to_string());
        }
    }
    out
}

#[tokio::test]
async fn stats_and_export_follow_the_log() {
    let f = fixture();
    let (_, _, s) = get(&f.app, "/api/stats").await;
    assert_eq!((s["accepted"].as_u64(), s["corrected"].as_u64(), s["pending"].as_u64()), (Some(0), Some(0), Some(80)));
    assert_eq!(s["correction_rate"], 0.0);
    let (_, _, body) = call(&f.app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert!(body.is_empty());

    let ids = first_ids(&f, 5);
    for (i, id) in ids.iter().take(3).enumerate() {
        post_verdict(&f.app, id, Some("r1"), json!({"event_id": format!("a{i}"), "verdict": "accept"})).await;
    }
    let item = f.store.item(&ids[3]).unwrap();
    let label = f.store.label_space(item.attribute).classes.iter().find(|c| **c != item.predicted).unwrap().clone();
    post_verdict(&f.app, &ids[3], Some("r2"), json!({"event_id": "c0", "verdict": "correct", "corrected_label": label})).await;
    // re-review: latest verdict wins
    post_verdict(&f.app, &ids[0], Some("r2"), json!({"event_id": "a0-again", "verdict": "accept"})).await;

    let (_, _, s) = get(&f.app, "/api/stats").await;
    assert_eq!((s["accepted"].as_u64(), s["corrected"].as_u64()), (Some(3), Some(1)));
    assert_eq!(s["correction_rate"], 0.25);
    assert_eq!(s["reviewers"]["r1"]["verdicts"], 3);
    assert_eq!(s["reviewers"]["r2"]["verdicts"], 2);

    let oracle = replay_oracle(&f.log);
    let accepted = oracle.values().filter(|v| *v == "accepted").count();
    let corrected = oracle.values().filter(|v| *v == "corrected").count();
    assert_eq!((s["accepted"].as_u64().unwrap() as usize, s["corrected"].as_u64().unwrap() as usize), (accepted, corrected));

    let (_, h, body) = call(&f.app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert_eq!(h["content-type"], "application/x-ndjson");
    let rows: Vec<Value> = String::from_utf8(body).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let corrected_row = rows.iter().find(|r| r["status"] == "corrected").unwrap();
    assert_eq!(corrected_row["label"], label.as_str());
    assert_ne!(corrected_row["label"], corrected_row["predicted"]);
}

#[tokio::test]
async fn reopening_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let store = open_store(&log);
    let app = router(store.clone(), None);
    let ids: Vec<String> = store.queue(&QueueFilter::default(), 1, 6).0.into_iter().map(|i| i.extraction_id).collect();
    for (i, id) in ids.iter().enumerate() {
        let body = if i % 3 == 2 {
            let item = store.item(id).unwrap();
            let label = store.label_space(item.attribute).classes[0].clone();
            json!({"event_id": format!("e{i}"), "verdict": "correct", "corrected_label": label})
        } else {
            json!({"event_id": format!("e{i}"), "verdict": "accept"})
        };
        assert_eq!(post_verdict(&app, id, Some("r"), body).await.0, StatusCode::OK);
    }
    let snapshot = |s: &Store| (s.queue(&QueueFilter::default(), 1, 500), s.stats(), s.export());
    let before = snapshot(&store);
    drop(app);
    drop(store);

    // a write cut short by a crash leaves a partial final line
    let mut raw = std::fs::read(&log).unwrap();
    raw.extend_from_slice(br#"{"event_id":"torn","timestamp":"#);
    std::fs::write(&log, &raw).unwrap();

    let reopened = open_store(&log);
    assert_eq!(snapshot(&reopened), before);
    assert_eq!(reopened.event_count(), 6);
    assert!(std::fs::read_to_string(&log).unwrap().ends_with('\n'));
    // an event id from before the restart is still recognized
    let app = router(reopened.clone(), None);
    post_verdict(&app, &ids[0], Some("r"), json!({"event_id": "e0", "verdict": "accept"})).await;
    assert_eq!(log_lines(&log), 6);
}

#[test]
fn corrupt_interior_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    std::fs::write(&log, "garbage\n{}\n").unwrap();
    assert!(matches!(EventLog::open(&log), Err(ServiceError::CorruptLog { line: 1, .. })));
}

#[tokio::test]
async fn model_backed_extractions_carry_verified_rationales() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle();
    let texts: Vec<&str> = b.patients.iter().flat_map(|p| p.documents.iter().map(|d| d.text.as_str())).collect();
    let vocab = learn_vocab(&texts, 300).unwrap();
    vocab.save(&dir.path().join("vocab.json")).unwrap();
    let space = b.label_space(regabstract_core::corpus::AttributeKind::Site);
    let mut cfg = ModelConfig::new(vocab.len(), space.len(), EncoderKind::ContextFree);
    cfg.embed_dim = 16;
    cfg.gru_hidden = 8;
    cfg.word_attn_dim = 8;
    cfg.sent_attn_dim = 8;
    let model: Model<f32> = Model::new(cfg, vocab.content_hash()).unwrap();
    save_checkpoint(&model, &dir.path().join(checkpoint_file_name("site", &EncoderKind::ContextFree))).unwrap();

    let predictors = load_predictors(Some(dir.path()), None).unwrap();
    let sources: BTreeMap<String, String> = predictors.sources().into_iter().collect();
    assert_eq!(sources["site"], "model:site.contextfree");
    assert_eq!(sources["histology"], "ontology");
    let xs = extract_all(&b, &predictors).unwrap();
    let site: Vec<&Extraction> = xs.iter().filter(|x| x.source.starts_with("model")).collect();
    assert_eq!(site.len(), 10);
    assert!(site.iter().filter(|x| x.rationale.is_some()).count() >= 8);
    for x in &xs {
        let sum: f64 = x.top5.iter().map(|l| l.prob).sum();
        assert!(sum <= 1.0 + 1e-6);
        assert!(x.top5.windows(2).all(|w| w[0].prob >= w[1].prob));
    }

    let log = dir.path().join("events.jsonl");
    let store = Arc::new(Store::open(b, xs, &log).unwrap());
    let config = ServiceConfig {
        port: 0,
        corpus_dir: dir.path().join("unused"),
        checkpoint_dir: Some(dir.path().to_path_buf()),
        vocab: None,
        log_path: log.clone(),
    };
    let app = router(store.clone(), Some(config));
    let id = store.corpus().patients[0].patient_id.clone();
    let (s, _, v) = get(&app, &format!("/api/patients/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    let site = v["extractions"].as_array().unwrap().iter().find(|e| e["attribute"] == "site").unwrap().clone();
    let docs = v["documents"].as_array().unwrap();
    for entry in site["rationale"]["entries"].as_array().unwrap() {
        let doc = docs.iter().find(|d| d["doc_id"] == entry["doc_id"]).unwrap();
        let text = doc["text"].as_str().unwrap();
        let (a, z) = (entry["char_start"].as_u64().unwrap() as usize, entry["char_end"].as_u64().unwrap() as usize);
        assert!(text.get(a..z).is_some());
    }

    let (s, _, _) = call(&app, Request::post("/api/admin/reinfer").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    for _ in 0..200 {
        if store.event_count() == 1 {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(25)).await;
    }
    assert_eq!(store.event_count(), 1);
    assert_eq!(store.stats().pending, 80);
    let events = read_events(&log).unwrap();
    assert!(matches!(events[0].body, EventBody::Inference(_)));
}
