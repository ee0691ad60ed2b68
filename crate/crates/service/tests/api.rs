use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use harasskit_core::agreement::{constant_panel_subset, fleiss_kappa, RatingMatrix};
use harasskit_core::corpus::{Category, Corpus};
use harasskit_core::crowd::GoldSet;
use harasskit_service::{label_records, read_events, router_shared, Shared, Study, StudyConfig};
use harasskit_testkit::{scripted_label, study_fixture};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    app: Router,
    study: Shared,
    corpus: Corpus,
    gold: GoldSet,
}

impl Harness {
    fn new(n_regular: usize, n_gold: usize, config: StudyConfig) -> Self {
        let (corpus, gold) = study_fixture(n_regular, n_gold);
        let study = Study::in_memory(corpus.clone(), gold.clone(), config).unwrap();
        Self::wrap(study, corpus, gold)
    }

    fn wrap(study: Study, corpus: Corpus, gold: GoldSet) -> Self {
        let study = Arc::new(Mutex::new(study));
        Harness { app: router_shared(study.clone()), study, corpus, gold }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value, bytes)
    }

    async fn register(&self, name: &str) -> String {
        let (status, v, _) = self.call("POST", "/api/raters", Some(json!({ "name": name }).to_string())).await;
        assert_eq!(status, StatusCode::CREATED);
        v["rater_id"].as_str().unwrap().to_string()
    }

    async fn batch(&self, rater: &str) -> (StatusCode, Value) {
        let (s, v, _) = self.call("GET", &format!("/api/raters/{rater}/batch"), None).await;
        (s, v)
    }

    fn truth(&self, item: &str) -> Category {
        self.corpus.get(item).unwrap().label.unwrap()
    }

    fn items(batch: &Value) -> Vec<String> {
        batch["items"].as_array().unwrap().iter().map(|i| i["item_id"].as_str().unwrap().to_string()).collect()
    }

    async fn submit(&self, rater: &str, labels: &[(String, u32)]) -> (StatusCode, Value) {
        let labels: Vec<Value> = labels.iter().map(|(i, c)| json!({ "item_id": i, "category": c })).collect();
        let (s, v, _) = self.call("POST", "/api/labels", Some(json!({ "rater_id": rater, "labels": labels }).to_string())).await;
        (s, v)
    }

    /// Fetches and fully answers one batch; gold answered right iff `gold_right`.
    async fn answer_batch(&self, rater: &str, gold_right: bool) -> Option<Value> {
        let (status, batch) = self.batch(rater).await;
        if status == StatusCode::NO_CONTENT {
            return None;
        }
        assert_eq!(status, StatusCode::OK);
        let labels: Vec<(String, u32)> = Self::items(&batch)
            .into_iter()
            .map(|id| {
                let t = self.truth(&id);
                let c = if self.gold.contains(&id) && !gold_right { Category::from_index((t.index() + 1) % 5).unwrap() } else { t };
                (id, c.code() as u32)
            })
            .collect();
        let (s, v) = self.submit(rater, &labels).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        Some(v)
    }
}

#[tokio::test]
async fn register_validates_names() {
    let h = Harness::new(20, 4, StudyConfig::default());
    assert_eq!(h.register("ana").await, "r1");
    assert_eq!(h.register("ben").await, "r2");
    for body in [json!({ "name": "  " }).to_string(), "{".to_string(), json!({ "nom": "x" }).to_string(), String::new()] {
        let (s, v, _) = h.call("POST", "/api/raters", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert!(v["error"].is_string());
    }
    let (s, v, _) = h.call("GET", "/api/raters/r1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["batch_size"], 10);
    assert_eq!(v["trust"], Value::Null);
}

#[tokio::test]
async fn unknown_rater_is_404() {
    let h = Harness::new(20, 4, StudyConfig::default());
    assert_eq!(h.batch("r9").await.0, StatusCode::NOT_FOUND);
    assert_eq!(h.call("GET", "/api/raters/r9", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(h.submit("r9", &[("s0000".into(), 1)]).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn instructions_are_stable() {
    let h = Harness::new(20, 4, StudyConfig::default());
    let (s, v, a) = h.call("GET", "/api/instructions", None).await;
    assert_eq!(s, StatusCode::OK);
    let codes: Vec<u64> = v.as_array().unwrap().iter().map(|i| i["code"].as_u64().unwrap()).collect();
    assert_eq!(codes, vec![1, 2, 3, 4, 5]);
    assert!(v[4]["definition"].as_str().unwrap().to_lowercase().contains("not sexist"));
    let (_, _, b) = h.call("GET", "/api/instructions", None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn first_batch_is_probation_sized_with_hidden_gold() {
    let h = Harness::new(40, 8, StudyConfig::default());
    let r = h.register("ana").await;
    let (s, batch) = h.batch(&r).await;
    assert_eq!(s, StatusCode::OK);
    let items = Harness::items(&batch);
    assert_eq!(items.len(), 10);
    assert_eq!(items.iter().filter(|i| h.gold.contains(i)).count(), 1);
    for item in batch["items"].as_array().unwrap() {
        let keys: BTreeSet<&str> = item.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, BTreeSet::from(["item_id", "text"]));
    }
    let (_, again) = h.batch(&r).await;
    assert_eq!(again, batch);
}

#[tokio::test]
async fn submission_errors_apply_nothing() {
    let h = Harness::new(40, 8, StudyConfig::default());
    let r = h.register("ana").await;
    let (_, batch) = h.batch(&r).await;
    let items = Harness::items(&batch);
    let before = h.study.lock().unwrap().state().clone();

    assert_eq!(h.submit(&r, &[(items[0].clone(), 3), (items[1].clone(), 9)]).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(h.submit(&r, &[(items[0].clone(), 0)]).await.0, StatusCode::BAD_REQUEST);
    let outside = h.corpus.documents.iter().map(|d| d.id.clone()).find(|id| !items.contains(id)).unwrap();
    assert_eq!(h.submit(&r, &[(items[0].clone(), 3), (outside, 3)]).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(h.submit(&r, &[(items[0].clone(), 3), (items[0].clone(), 2)]).await.0, StatusCode::CONFLICT);
    assert_eq!(h.submit(&r, &[]).await.0, StatusCode::BAD_REQUEST);
    let (s, _, _) = h.call("POST", "/api/labels", Some(json!({ "rater_id": r, "labels": [{ "item_id": items[0], "category": "x" }] }).to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(*h.study.lock().unwrap().state(), before);

    let (s, v) = h.submit(&r, &[(items[0].clone(), 3)]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["batch_complete"], false);
    assert_eq!(h.submit(&r, &[(items[0].clone(), 3)]).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn completed_batch_reports_gold_and_next_batch_is_disjoint() {
    let h = Harness::new(40, 8, StudyConfig::default());
    let r = h.register("ana").await;
    let (_, first) = h.batch(&r).await;
    let v = h.answer_batch(&r, true).await.unwrap();
    assert_eq!(v["batch_complete"], true);
    assert_eq!(v["gold_answered"], 1);
    assert_eq!(v["gold_correct"], 1);
    assert_eq!(v["gold_results"].as_array().unwrap().len(), 1);
    let (_, second) = h.batch(&r).await;
    assert_ne!(first["batch_id"], second["batch_id"]);
    let a: BTreeSet<String> = Harness::items(&first).into_iter().collect();
    assert!(Harness::items(&second).iter().all(|i| !a.contains(i)));
}

#[tokio::test]
async fn perfect_gold_window_earns_largest_batch() {
    let h = Harness::new(120, 16, StudyConfig::default());
    let r = h.register("ana").await;
    for _ in 0..8 {
        h.answer_batch(&r, true).await.unwrap();
    }
    let (_, v, _) = h.call("GET", &format!("/api/raters/{r}"), None).await;
    assert_eq!(v["gold_answered"], 8);
    assert_eq!(v["trust"], 1.0);
    assert_eq!(v["batch_size"], 20);
    let (_, batch) = h.batch(&r).await;
    assert_eq!(Harness::items(&batch).len(), 20);
    assert_eq!(Harness::items(&batch).iter().filter(|i| h.gold.contains(i)).count(), 2);
}

#[tokio::test]
async fn failing_gold_excludes() {
    let h = Harness::new(120, 16, StudyConfig::default());
    let r = h.register("ana").await;
    for _ in 0..8 {
        h.answer_batch(&r, false).await.unwrap();
    }
    assert_eq!(h.batch(&r).await.0, StatusCode::FORBIDDEN);
    let stats = h.call("GET", "/api/stats", None).await.1;
    assert_eq!(stats["raters"][0]["excluded"], true);
    // every aggregated vote came from the excluded rater, so nothing is counted
    let total: u64 = stats["histogram"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 0);
}

#[tokio::test]
async fn exhausted_pool_is_204() {
    let h = Harness::new(12, 4, StudyConfig::default());
    let r = h.register("ana").await;
    assert!(h.answer_batch(&r, true).await.is_some());
    assert!(h.answer_batch(&r, true).await.is_some());
    assert_eq!(h.batch(&r).await.0, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn raters_per_item_caps_assignments() {
    let config = StudyConfig { raters_per_item: Some(1), ..StudyConfig::default() };
    let h = Harness::new(9, 4, config);
    let a = h.register("ana").await;
    let b = h.register("ben").await;
    assert_eq!(h.batch(&a).await.0, StatusCode::OK);
    assert_eq!(h.batch(&b).await.0, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn empty_study_stats() {
    let h = Harness::new(20, 4, StudyConfig::default());
    h.register("ana").await;
    let (s, v, _) = h.call("GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    let rows = v["histogram"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r["count"] == 0));
    assert_eq!(v["kappa"], Value::Null);
}

#[tokio::test]
async fn probation_batch_is_configurable() {
    let h = Harness::new(60, 12, StudyConfig { probation_batch: 6, ..StudyConfig::default() });
    let r = h.register("ana").await;
    for _ in 0..3 {
        let (_, b) = h.batch(&r).await;
        assert_eq!(Harness::items(&b).len(), 6);
        h.answer_batch(&r, true).await.unwrap();
    }
}

async fn scripted_study(h: &Harness, raters: usize) {
    let ids: Vec<String> = register_all(h, raters).await;
    // round-robin until every rater runs dry
    let mut active: Vec<usize> = (0..raters).collect();
    while !active.is_empty() {
        let mut still = Vec::new();
        for &k in &active {
            let (status, batch) = h.batch(&ids[k]).await;
            if status != StatusCode::OK {
                continue;
            }
            let labels: Vec<(String, u32)> = Harness::items(&batch)
                .into_iter()
                .map(|id| {
                    let c = scripted_label(h.truth(&id), k, &id);
                    (id, c.code() as u32)
                })
                .collect();
            // two submissions per batch exercise partial progress
            let (first, rest) = labels.split_at(labels.len() / 2);
            assert_eq!(h.submit(&ids[k], first).await.0, StatusCode::OK);
            assert_eq!(h.submit(&ids[k], rest).await.0, StatusCode::OK);
            still.push(k);
        }
        active = still;
    }
}

async fn register_all(h: &Harness, raters: usize) -> Vec<String> {
    let mut ids = Vec::new();
    for k in 0..raters {
        ids.push(h.register(&format!("rater {k}")).await);
    }
    ids
}

#[tokio::test]
async fn log_replay_matches_live_state_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let (corpus, gold) = study_fixture(30, 12);
    let config = StudyConfig { seed: 5, ..StudyConfig::default() };
    let study = Study::open(corpus.clone(), gold.clone(), config.clone(), &log).unwrap();
    let h = Harness::wrap(study, corpus.clone(), gold.clone());
    scripted_study(&h, 3).await;

    let live = h.study.lock().unwrap().state().clone();
    assert_eq!(live.labels.iter().filter(|l| !l.was_gold).count(), 90);
    let events = read_events(&log).unwrap();
    let rebuilt = Study::replay(corpus.clone(), gold.clone(), config.clone(), &events).unwrap();
    assert_eq!(*rebuilt.state(), live);
    let reopened = Study::open(corpus, gold, config, &log).unwrap();
    assert_eq!(*reopened.state(), live);

    let stats = h.call("GET", "/api/stats", None).await.1;
    let subset = constant_panel_subset(&label_records(&events, false));
    let k = fleiss_kappa(&RatingMatrix::from_labels(&subset, 5).unwrap()).unwrap().kappa;
    assert!((stats["kappa"].as_f64().unwrap() - k).abs() < 1e-12);
    assert_eq!(stats["kappa_items"], 30);
    assert_eq!(stats["kappa_raters"], 3);
    let total: u64 = stats["histogram"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 30);
}

#[tokio::test]
async fn thirteen_rater_stats_kappa_matches_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let (corpus, gold) = study_fixture(30, 12);
    let study = Study::open(corpus.clone(), gold.clone(), StudyConfig::default(), &log).unwrap();
    let h = Harness::wrap(study, corpus, gold);
    scripted_study(&h, 13).await;
    let stats = h.call("GET", "/api/stats", None).await.1;
    assert_eq!(stats["kappa_raters"], 13);
    let records = label_records(&read_events(&log).unwrap(), false);
    let k = fleiss_kappa(&RatingMatrix::from_labels(&constant_panel_subset(&records), 5).unwrap()).unwrap().kappa;
    assert!((stats["kappa"].as_f64().unwrap() - k).abs() < 1e-12);
}

#[tokio::test]
async fn same_seed_issues_same_batches() {
    let run = || async {
        let h = Harness::new(30, 12, StudyConfig { seed: 9, ..StudyConfig::default() });
        scripted_study(&h, 2).await;
        let s = h.study.lock().unwrap().state().clone();
        s.labels.iter().map(|l| (l.batch_id.clone(), l.item_id.clone(), l.category)).collect::<Vec<_>>()
    };
    assert_eq!(run().await, run().await);
}
