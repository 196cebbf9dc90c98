//! HTTP evaluation service with a persisted, append-only leaderboard.
//!
//! The service holds the test annotations server-side and only ever returns
//! aggregate scores. Submissions are evaluated deterministically, appended to
//! a line-delimited JSON store, and replayed on boot, so a restart preserves
//! the leaderboard. Duplicate submissions are detected by content digest and
//! flagged, never rejected.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fsod_core::dataset::Dataset;
use fsod_core::eval::{evaluate, CohortAp, Detection, EvalConfig};

pub const TOKEN_HEADER: &str = "x-api-token";
pub const DEFAULT_MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub team: String,
    pub submitted_at: DateTime<Utc>,
    pub cohort_ap: CohortAp,
    pub digest: String,
    /// Set when an earlier entry carries the same digest.
    #[serde(default)]
    pub duplicate: bool,
}

#[derive(Debug, Deserialize)]
struct Submission {
    team: String,
    predictions: Vec<Detection>,
}

#[derive(Debug, Serialize)]
struct EvaluateResponse {
    team: String,
    digest: String,
    duplicate: bool,
    cohort_ap: CohortAp,
    per_class_ap: std::collections::BTreeMap<i64, f64>,
}

/// Append-only JSONL store, replayed on construction.
pub struct Store {
    path: PathBuf,
    entries: Vec<LeaderboardEntry>,
}

impl Store {
    pub fn open(path: PathBuf) -> Result<Store> {
        let mut entries = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading leaderboard store {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let e: LeaderboardEntry = serde_json::from_str(line)
                    .with_context(|| format!("leaderboard store line {}", i + 1))?;
                entries.push(e);
            }
        }
        Ok(Store { path, entries })
    }

    pub fn append(&mut self, entry: LeaderboardEntry) -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .with_context(|| format!("opening leaderboard store {}", self.path.display()))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        f.flush()?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn has_digest(&self, digest: &str) -> bool {
        self.entries.iter().any(|e| e.digest == digest)
    }

    /// Entries sorted by All-AP descending; entries without a defined All-AP
    /// sort last.
    pub fn ranked(&self) -> Vec<LeaderboardEntry> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| {
            let ka = a.cohort_ap.all.unwrap_or(f64::NEG_INFINITY);
            let kb = b.cohort_ap.all.unwrap_or(f64::NEG_INFINITY);
            kb.partial_cmp(&ka).unwrap().then(a.submitted_at.cmp(&b.submitted_at))
        });
        v
    }
}

pub struct ServerState {
    pub dataset: Dataset,
    pub eval_config: EvalConfig,
    pub restrict: Option<BTreeSet<i64>>,
    pub store: Mutex<Store>,
    pub token: Option<String>,
}

pub fn router(state: Arc<ServerState>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/v1/evaluate", post(handle_evaluate))
        .route("/v1/leaderboard", get(handle_leaderboard))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

fn check_token(state: &ServerState, headers: &HeaderMap) -> Result<(), Box<Response>> {
    if let Some(expected) = &state.token {
        let got = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if got != Some(expected.as_str()) {
            return Err(Box::new(
                (
                    StatusCode::UNAUTHORIZED,
                    Json(serde_json::json!({"error": "missing or invalid api token"})),
                )
                    .into_response(),
            ));
        }
    }
    Ok(())
}

async fn handle_evaluate(
    State(state): State<Arc<ServerState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return *resp;
    }
    let submission: Submission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({"error": format!("invalid submission body: {e}")})),
            )
                .into_response();
        }
    };
    if submission.team.trim().is_empty() {
        return (
            StatusCode::BAD_REQUEST,
            Json(serde_json::json!({"error": "team name must be non-empty"})),
        )
            .into_response();
    }

    let result = match evaluate(
        &state.dataset,
        &submission.predictions,
        &state.eval_config,
        state.restrict.as_ref(),
    ) {
        Ok(r) => r,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({"error": e.to_string()})),
            )
                .into_response();
        }
    };

    let digest = submission_digest(&submission.predictions);
    let entry = {
        let mut store = state.store.lock().expect("store lock");
        let entry = LeaderboardEntry {
            team: submission.team.clone(),
            submitted_at: Utc::now(),
            cohort_ap: result.cohort_ap.clone(),
            duplicate: store.has_digest(&digest),
            digest: digest.clone(),
        };
        if let Err(e) = store.append(entry.clone()) {
            return (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(serde_json::json!({"error": format!("leaderboard write failed: {e}")})),
            )
                .into_response();
        }
        entry
    };

    Json(EvaluateResponse {
        team: entry.team,
        digest,
        duplicate: entry.duplicate,
        cohort_ap: result.cohort_ap,
        per_class_ap: result.per_class_ap,
    })
    .into_response()
}

async fn handle_leaderboard(
    State(state): State<Arc<ServerState>>,
    headers: HeaderMap,
) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return *resp;
    }
    let ranked = state.store.lock().expect("store lock").ranked();
    Json(ranked).into_response()
}

/// Content digest over the canonical serialization of the predictions.
pub fn submission_digest(predictions: &[Detection]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(predictions).expect("serialization cannot fail"));
    hex::encode(h.finalize())
}
