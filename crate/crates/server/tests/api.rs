use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gesa_core::model::AllocationPlan;
use gesa_server::{router, AppState, IDEMPOTENCY_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const SPEC: &str = r#"{"candidates": 60, "roles": 8, "skills": 40, "organizations": 4, "locations": 3, "domains": 3, "seed": 9}"#;

fn config(seed: u64) -> Value {
    json!({
        "embedding_dim": 32,
        "optimizer": { "population_size": 24, "max_generations": 15, "seed": seed, "tradeoff_seeds": 2 }
    })
}

struct Api {
    app: Router,
    _dir: TempDir,
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(k) = key {
        req = req.header(IDEMPOTENCY_HEADER, k);
    }
    let body = body.map_or(Body::empty(), |v| Body::from(v.to_string()));
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

impl Api {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        Self { app: router(AppState::open(dir.path()).unwrap()), _dir: dir }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        call(&self.app, method, uri, body, None).await
    }

    async fn generate(&self, id: &str) {
        let (status, body) = self.call("POST", &format!("/datasets/{id}/generate"), Some(serde_json::from_str(SPEC).unwrap())).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        assert_eq!(body["candidates"], 60);
    }

    async fn wait(&self, job: &str) -> Value {
        for _ in 0..600 {
            let (status, body) = self.call("GET", &format!("/allocations/{job}"), None).await;
            assert_eq!(status, StatusCode::OK);
            match body["status"].as_str().unwrap() {
                "done" | "failed" => return body,
                _ => tokio::time::sleep(Duration::from_millis(50)).await,
            }
        }
        panic!("job {job} did not finish");
    }

    async fn finished_job(&self, dataset: &str, seed: u64) -> String {
        let (status, body) = self.call("POST", "/allocations", Some(json!({ "dataset_id": dataset, "config": config(seed) }))).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        let job = body["job_id"].as_str().unwrap().to_string();
        let done = self.wait(&job).await;
        assert_eq!(done["status"], "done", "{done}");
        job
    }
}

fn plan(v: &Value) -> AllocationPlan {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test]
async fn submit_poll_and_read_the_front() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 1).await;
    let (status, record) = api.call("GET", &format!("/allocations/{job}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["result"], "front.json");
    assert!(record["finished_ms"].as_u64().unwrap() >= record["created_ms"].as_u64().unwrap());
    let (status, front) = api.call("GET", &format!("/allocations/{job}/front"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!front["members"].as_array().unwrap().is_empty());
    assert_eq!(front["trace"].as_array().unwrap().len(), 16);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let api = Api::new();
    let (status, body) = api.call("POST", "/allocations", Some(json!({ "dataset_id": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    assert_eq!(api.call("GET", "/datasets/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.call("GET", "/allocations/job-000042", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.call("GET", "/allocations/job-000042/front", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let api = Api::new();
    api.generate("demo").await;
    let bad = json!({ "dataset_id": "demo", "config": { "optimizer": { "population_size": 0 } } });
    assert_eq!(api.call("POST", "/allocations", Some(bad)).await.0, StatusCode::BAD_REQUEST);
    let files = json!({ "dataset_id": "demo", "config": { "graph_embeddings": "g.json" } });
    assert_eq!(api.call("POST", "/allocations", Some(files)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(api.call("POST", "/datasets", Some(json!({ "candidates": 3 }))).await.0, StatusCode::BAD_REQUEST);
    let empty = json!({ "candidates": 0 });
    assert_eq!(api.call("POST", "/datasets/x/generate", Some(empty)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn uploaded_datasets_are_content_addressed() {
    let api = Api::new();
    api.generate("demo").await;
    let (_, doc) = api.call("GET", "/datasets/demo", None).await;
    let dataset = doc["dataset"].clone();
    let (status, first) = api.call("POST", "/datasets", Some(dataset.clone())).await;
    assert_eq!(status, StatusCode::CREATED, "{first}");
    let id = first["dataset_id"].as_str().unwrap();
    assert!(id.starts_with("ds-") && id.len() == 15);
    let (_, second) = api.call("POST", "/datasets", Some(dataset.clone())).await;
    assert_eq!(first, second);
    let (status, stored) = api.call("GET", &format!("/datasets/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stored["dataset"], dataset);
}

#[tokio::test]
async fn identical_submits_give_identical_fronts() {
    let api = Api::new();
    api.generate("demo").await;
    let a = api.finished_job("demo", 3).await;
    let b = api.finished_job("demo", 3).await;
    assert_ne!(a, b);
    let (_, fa) = api.call("GET", &format!("/allocations/{a}/front"), None).await;
    let (_, fb) = api.call("GET", &format!("/allocations/{b}/front"), None).await;
    assert_eq!(fa, fb);
}

#[tokio::test]
async fn one_active_job_per_dataset() {
    let api = Api::new();
    api.generate("demo").await;
    let slow = json!({ "dataset_id": "demo", "config": { "embedding_dim": 32, "optimizer": { "population_size": 60, "max_generations": 400, "stagnation_generations": 1000 } } });
    let (status, body) = api.call("POST", "/allocations", Some(slow.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = body["job_id"].as_str().unwrap().to_string();
    let (status, _) = api.call("POST", "/allocations", Some(slow)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = api.call("GET", &format!("/allocations/{job}/front"), None).await;
    assert!(status == StatusCode::CONFLICT || status == StatusCode::OK);
    api.wait(&job).await;
}

#[tokio::test]
async fn overrides_round_trip_and_replay() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 1).await;
    let (_, doc) = api.call("GET", "/datasets/demo", None).await;
    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    let current = plan(&listing["plan"]);
    assert!(listing["overrides"].as_array().unwrap().is_empty());

    // Move an assigned candidate to a role with spare capacity.
    let roles = doc["dataset"]["roles"].as_array().unwrap();
    let load = |r: &str| current.assignments.values().filter(|x| *x == r).count() as u64;
    let (cand, from) = current.assignments.iter().next().unwrap();
    let target = roles
        .iter()
        .find(|r| r["id"] != from.as_str() && load(r["id"].as_str().unwrap()) < r["capacity"].as_u64().unwrap())
        .expect("a role with spare capacity")["id"]
        .as_str()
        .unwrap()
        .to_string();
    let req = json!({ "candidate_id": cand, "to_role": target, "justification": "interview feedback", "actor": "alex", "reason": "skills" });
    let (status, ack) = api.call("POST", &format!("/allocations/{job}/overrides"), Some(req)).await;
    assert_eq!(status, StatusCode::CREATED, "{ack}");
    assert_eq!(ack["record"]["seq"], 1);
    assert_eq!(ack["record"]["from_role"], from.as_str());
    let moved = plan(&ack["plan"]);
    assert_eq!(moved.assignments[cand], target);
    assert!(ack["fairness"]["composite"].is_number());

    // Unassign another candidate.
    let other = current.assignments.keys().nth(1).unwrap().clone();
    let req = json!({ "candidate_id": other, "justification": "withdrew" });
    let (status, ack) = api.call("POST", &format!("/allocations/{job}/overrides"), Some(req)).await;
    assert_eq!(status, StatusCode::CREATED, "{ack}");
    let after = plan(&ack["plan"]);
    assert!(!after.assignments.contains_key(&other));
    assert_ne!(after.objective_values, current.objective_values);

    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    assert_eq!(listing["overrides"].as_array().unwrap().len(), 2);
    assert_eq!(plan(&listing["plan"]), after);
    assert_eq!(plan(&listing["base"]), current);

    // Fairness report reflects the working plan.
    let (status, report) = api.call("GET", &format!("/allocations/{job}/fairness-report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report, ack["fairness"]);

    let (_, fb) = api.call("GET", "/feedback/weights", None).await;
    assert_eq!(fb["override_counts"]["skills"], 1);
    assert_eq!(fb["override_counts"]["unspecified"], 1);
}

#[tokio::test]
async fn replay_reproduces_the_working_plan_after_restart() {
    let dir = TempDir::new().unwrap();
    let state = AppState::open(dir.path()).unwrap();
    let app = router(state.clone());
    let api = Api { app, _dir: TempDir::new().unwrap() };
    api.generate("demo").await;
    let job = api.finished_job("demo", 2).await;
    let (_, doc) = api.call("GET", "/datasets/demo", None).await;
    let candidates: Vec<String> =
        doc["dataset"]["candidates"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap().to_string()).collect();
    for (i, c) in candidates.iter().take(6).enumerate() {
        let req = json!({ "candidate_id": c, "justification": format!("step {i}") });
        let (status, _) = api.call("POST", &format!("/allocations/{job}/overrides"), Some(req)).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let current = state.store().plan_state(&job).unwrap().current;
    assert_eq!(state.store().replayed(&job).unwrap(), current);

    let reopened = AppState::open(dir.path()).unwrap();
    assert_eq!(reopened.store().plan_state(&job).unwrap().current, current);
    assert_eq!(reopened.store().replayed(&job).unwrap(), current);
    let again = Api { app: router(reopened), _dir: TempDir::new().unwrap() };
    let (status, _) = again.call("GET", &format!("/allocations/{job}/fairness-report"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn invalid_overrides_are_rejected() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 1).await;
    let (_, doc) = api.call("GET", "/datasets/demo", None).await;
    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    let current = plan(&listing["plan"]);
    let url = format!("/allocations/{job}/overrides");

    let (cand, role) = current.assignments.iter().next().unwrap();
    let blank = json!({ "candidate_id": cand, "to_role": role, "justification": "   " });
    let (status, body) = api.call("POST", &url, Some(blank)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("justification"));

    // Fill a role to capacity, then push one more candidate into it.
    let role = &doc["dataset"]["roles"][0];
    let rid = role["id"].as_str().unwrap();
    let capacity = role["capacity"].as_u64().unwrap() as usize;
    let mut placed = current.assignments.values().filter(|r| *r == rid).count();
    let outsiders: Vec<&str> = doc["dataset"]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_str().unwrap())
        .filter(|c| current.assignments.get(*c).is_none_or(|r| r != rid))
        .collect();
    let mut outsiders = outsiders.into_iter();
    while placed < capacity {
        let req = json!({ "candidate_id": outsiders.next().unwrap(), "to_role": rid, "justification": "fill" });
        assert_eq!(api.call("POST", &url, Some(req)).await.0, StatusCode::CREATED);
        placed += 1;
    }
    let req = json!({ "candidate_id": outsiders.next().unwrap(), "to_role": rid, "justification": "one too many" });
    let (status, body) = api.call("POST", &url, Some(req)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("capacity"));

    let ghost = json!({ "candidate_id": "ghost", "to_role": rid, "justification": "x" });
    assert_eq!(api.call("POST", &url, Some(ghost)).await.0, StatusCode::NOT_FOUND);
    let ghost_role = json!({ "candidate_id": cand, "to_role": "ghost", "justification": "x" });
    assert_eq!(api.call("POST", &url, Some(ghost_role)).await.0, StatusCode::NOT_FOUND);

    let (_, listing) = api.call("GET", &url, None).await;
    assert_eq!(listing["overrides"].as_array().unwrap().len(), capacity - current.assignments.values().filter(|r| *r == rid).count());
}

#[tokio::test]
async fn selection_follows_weights_and_feedback() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 4).await;
    let url = format!("/allocations/{job}/select");
    let (status, merit) = api.call("POST", &url, Some(json!({ "weights": [1.0, 0.0, 0.0] }))).await;
    assert_eq!(status, StatusCode::OK, "{merit}");
    assert_eq!(merit["applied"], true);
    let (_, front) = api.call("GET", &format!("/allocations/{job}/front"), None).await;
    let best = front["members"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["penalized"]["merit"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(merit["plan"]["objective_values"]["merit"].as_f64().unwrap(), best);

    let (status, _) = api.call("POST", &url, Some(json!({ "weights": [0.5, 0.6, 0.0] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // Feedback drives selection when no weights are given.
    let (status, fb) = api.call("POST", "/feedback/weights", Some(json!({ "weights": [0.0, 1.0, 0.0], "eta": 1.0 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fb["weights"], json!([0.0, 1.0, 0.0]));
    let (_, by_feedback) = api.call("POST", &url, Some(json!({}))).await;
    let (_, explicit) = api.call("POST", &url, Some(json!({ "weights": [0.0, 1.0, 0.0] }))).await;
    assert_eq!(by_feedback["plan"], explicit["plan"]);
    assert_eq!(by_feedback["weights"], json!([0.0, 1.0, 0.0]));

    // After an override the working plan is kept.
    let cand = plan(&explicit["plan"]).assignments.keys().next().unwrap().clone();
    let req = json!({ "candidate_id": cand, "justification": "kept back" });
    assert_eq!(api.call("POST", &format!("/allocations/{job}/overrides"), Some(req)).await.0, StatusCode::CREATED);
    let (_, later) = api.call("POST", &url, Some(json!({ "weights": [1.0, 0.0, 0.0] }))).await;
    assert_eq!(later["applied"], false);
    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    assert!(!plan(&listing["plan"]).assignments.contains_key(&cand));
}

#[tokio::test]
async fn unsatisfiable_mandatory_constraints_are_unprocessable() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 1).await;
    let (_, doc) = api.call("GET", "/datasets/demo", None).await;
    let (category, labels) = doc["dataset"]["demographic_categories"].as_object().unwrap().iter().next().unwrap();
    let label = labels.as_array().unwrap()[0].as_str().unwrap();
    let floor = gesa_core::model::Constraint::RepresentationFloor { category: category.clone(), label: label.into(), floor: 10_000 };
    let body = json!({ "weights": [0.4, 0.3, 0.3], "mandatory": [floor] });
    let (status, _) = api.call("POST", &format!("/allocations/{job}/select"), Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn feedback_arithmetic() {
    let api = Api::new();
    let (_, start) = api.call("GET", "/feedback/weights", None).await;
    assert_eq!(start["weights"], json!([0.4, 0.3, 0.3]));
    assert_eq!(start["eta"], 0.2);
    api.call("POST", "/feedback/weights", Some(json!({ "weights": [0.6, 0.2, 0.2], "eta": 1.0 }))).await;
    let (status, next) = api.call("POST", "/feedback/weights", Some(json!({ "weights": [0.2, 0.6, 0.2], "eta": 0.2 }))).await;
    assert_eq!(status, StatusCode::OK);
    let w: Vec<f64> = serde_json::from_value(next["weights"].clone()).unwrap();
    for (a, b) in w.iter().zip([0.52, 0.28, 0.2]) {
        assert!((a - b).abs() <= 1e-12, "{w:?}");
    }
    let (status, _) = api.call("POST", "/feedback/weights", Some(json!({ "weights": [0.2, 0.2, 0.2] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.call("POST", "/feedback/weights", Some(json!({ "weights": [0.2, 0.6, 0.2], "eta": 0.0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn explanations_cover_all_levels() {
    let api = Api::new();
    api.generate("demo").await;
    let job = api.finished_job("demo", 1).await;
    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    let current = plan(&listing["plan"]);
    let (cand, role) = current.assignments.iter().next().unwrap();
    let (status, bundle) = api.call("GET", &format!("/allocations/{job}/explanations/{cand}/{role}"), None).await;
    assert_eq!(status, StatusCode::OK, "{bundle}");
    assert_eq!(bundle["candidate_id"], cand.as_str());
    assert!(!bundle["executive_summary"].as_str().unwrap().is_empty());
    assert_eq!(bundle["detailed"].as_array().unwrap().len(), 5);
    assert!(bundle["counterfactual"]["achievable"].is_boolean());
    let phi: f64 = bundle["shap"]["attributions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!(phi.is_finite());
    let (status, _) = api.call("GET", &format!("/allocations/{job}/explanations/ghost/{role}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retries_with_the_same_key_are_replayed() {
    let api = Api::new();
    api.generate("demo").await;
    let body = json!({ "dataset_id": "demo", "config": config(5) });
    let (s1, first) = call(&api.app, "POST", "/allocations", Some(body.clone()), Some("k1")).await;
    let (s2, second) = call(&api.app, "POST", "/allocations", Some(body.clone()), Some("k1")).await;
    assert_eq!((s1, s2), (StatusCode::ACCEPTED, StatusCode::ACCEPTED));
    assert_eq!(first, second);
    let job = first["job_id"].as_str().unwrap().to_string();
    api.wait(&job).await;

    let other = json!({ "dataset_id": "demo", "config": config(6) });
    let (status, _) = call(&api.app, "POST", "/allocations", Some(other), Some("k1")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, listing) = api.call("GET", &format!("/allocations/{job}/overrides"), None).await;
    let cand = plan(&listing["plan"]).assignments.keys().next().unwrap().clone();
    let url = format!("/allocations/{job}/overrides");
    let req = json!({ "candidate_id": cand, "justification": "retry me" });
    let (a, ra) = call(&api.app, "POST", &url, Some(req.clone()), Some("o1")).await;
    let (b, rb) = call(&api.app, "POST", &url, Some(req.clone()), Some("o1")).await;
    assert_eq!((a, b), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(ra, rb);
    let (_, listing) = api.call("GET", &url, None).await;
    assert_eq!(listing["overrides"].as_array().unwrap().len(), 1);

    let fb = json!({ "weights": [0.2, 0.6, 0.2] });
    let (_, x) = call(&api.app, "POST", "/feedback/weights", Some(fb.clone()), Some("f1")).await;
    let (_, y) = call(&api.app, "POST", "/feedback/weights", Some(fb.clone()), Some("f1")).await;
    assert_eq!(x, y);
    let (_, now) = api.call("GET", "/feedback/weights", None).await;
    assert_eq!(now["weights"], x["weights"]);
}
