//! Service acceptance: leaderboard ordering, restart persistence, and
//! deterministic resubmission, exercised over real HTTP round-trips.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use fsod_core::dataset::{CohortAssignment, Dataset};
use fsod_core::eval::EvalConfig;

use fsod_cli::server::{router, ServerState, Store};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn test_dataset() -> Dataset {
    Dataset::load(fixture("dataset.json"), CohortAssignment::default()).unwrap()
}

async fn spawn(store_path: PathBuf, max_body: usize, token: Option<String>) -> SocketAddr {
    let state = Arc::new(ServerState {
        dataset: test_dataset(),
        eval_config: EvalConfig::default(),
        restrict: None,
        store: Mutex::new(Store::open(store_path).unwrap()),
        token,
    });
    let app = router(state, max_body);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn full_echo() -> serde_json::Value {
    serde_json::json!([
        {"image_id": 1, "category_id": 1, "bbox": [0,0,10,10], "score": 1.0},
        {"image_id": 2, "category_id": 1, "bbox": [20,20,10,10], "score": 1.0},
        {"image_id": 1, "category_id": 2, "bbox": [40,40,20,20], "score": 1.0}
    ])
}

fn class1_only() -> serde_json::Value {
    serde_json::json!([
        {"image_id": 1, "category_id": 1, "bbox": [0,0,10,10], "score": 1.0},
        {"image_id": 2, "category_id": 1, "bbox": [20,20,10,10], "score": 1.0}
    ])
}

#[tokio::test]
async fn criterion_9_service_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("leaderboard.jsonl");
    let addr = spawn(store.clone(), 1 << 20, None).await;
    let client = reqwest::Client::new();
    let base = format!("http://{addr}");

    // two submissions engineered to score All-AP 1.0 and 0.5
    let r1: serde_json::Value = client
        .post(format!("{base}/v1/evaluate"))
        .json(&serde_json::json!({"team": "alpha", "predictions": full_echo()}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r1["cohort_ap"]["all"].as_f64().unwrap(), 1.0);

    let r2: serde_json::Value = client
        .post(format!("{base}/v1/evaluate"))
        .json(&serde_json::json!({"team": "beta", "predictions": class1_only()}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r2["cohort_ap"]["all"].as_f64().unwrap(), 0.5);

    // higher All-AP first
    let board: serde_json::Value = client
        .get(format!("{base}/v1/leaderboard"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(board.as_array().unwrap().len(), 2);
    assert_eq!(board[0]["team"], "alpha");
    assert_eq!(board[1]["team"], "beta");

    // restart: a fresh server over the same store replays all entries
    let addr2 = spawn(store.clone(), 1 << 20, None).await;
    let base2 = format!("http://{addr2}");
    let board2: serde_json::Value = client
        .get(format!("{base2}/v1/leaderboard"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(board2.as_array().unwrap().len(), 2);
    assert_eq!(board2[0]["team"], "alpha");

    // resubmission is deterministic and flagged as duplicate
    let r3: serde_json::Value = client
        .post(format!("{base2}/v1/evaluate"))
        .json(&serde_json::json!({"team": "alpha", "predictions": full_echo()}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r3["cohort_ap"], r1["cohort_ap"]);
    assert_eq!(r3["digest"], r1["digest"]);
    assert_eq!(r3["duplicate"], true);

    println!("PASS criterion 9: leaderboard ordering, restart persistence, deterministic resubmission");
}

#[tokio::test]
async fn invalid_body_is_400_with_details() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = spawn(tmp.path().join("lb.jsonl"), 1 << 20, None).await;
    let client = reqwest::Client::new();
    let resp = client
        .post(format!("http://{addr}/v1/evaluate"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let v: serde_json::Value = resp.json().await.unwrap();
    assert!(v["error"].as_str().unwrap().contains("invalid submission body"));

    // unknown image id is a validation failure, also 400
    let resp = client
        .post(format!("http://{addr}/v1/evaluate"))
        .json(&serde_json::json!({"team": "x", "predictions": [
            {"image_id": 99, "category_id": 1, "bbox": [0,0,1,1], "score": 0.5}
        ]}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let v: serde_json::Value = resp.json().await.unwrap();
    assert!(v["error"].as_str().unwrap().contains("unknown image 99"));
}

#[tokio::test]
async fn oversized_payload_is_413() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = spawn(tmp.path().join("lb.jsonl"), 64, None).await;
    let client = reqwest::Client::new();
    let resp = client
        .post(format!("http://{addr}/v1/evaluate"))
        .json(&serde_json::json!({"team": "x", "predictions": full_echo()}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 413);
}

#[tokio::test]
async fn empty_leaderboard_is_200_empty_list() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = spawn(tmp.path().join("lb.jsonl"), 1 << 20, None).await;
    let resp = reqwest::get(format!("http://{addr}/v1/leaderboard")).await.unwrap();
    assert_eq!(resp.status(), 200);
    let v: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(v, serde_json::json!([]));
}

#[tokio::test]
async fn shared_token_is_enforced_when_configured() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = spawn(tmp.path().join("lb.jsonl"), 1 << 20, Some("secret".into())).await;
    let client = reqwest::Client::new();
    let resp = client
        .get(format!("http://{addr}/v1/leaderboard"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 401);
    let resp = client
        .get(format!("http://{addr}/v1/leaderboard"))
        .header("x-api-token", "secret")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
}
