//! A stand-in scoring service speaking the `/v1` protocol, written against
//! the wire format directly (no client types) so the client is tested
//! against an independent implementation.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

pub const MODEL: &str = "mock-fnv";

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(1099511628211);
    }
    h
}

pub fn expected_score(id: &str, metric: &str) -> u64 {
    fnv1a(&format!("{id}:{metric}")) % 101
}

/// First `n` whitespace-delimited tokens of `text`, separators kept.
fn first_tokens(text: &str, n: usize) -> &str {
    let mut tokens = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token && tokens == n {
                return &text[..i];
            }
            in_token = false;
        } else if !in_token {
            in_token = true;
            tokens += 1;
            if tokens > n {
                return text[..i].trim_end();
            }
        }
    }
    text
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub token: Option<String>,
    pub latency: Duration,
    pub unhealthy: bool,
    /// Answer this many score calls with HTTP 503 before succeeding.
    pub fail_first: usize,
}

#[derive(Debug, Default)]
pub struct Stats {
    pub in_flight: AtomicUsize,
    pub peak: AtomicUsize,
    pub score_calls: AtomicUsize,
    pub health_calls: AtomicUsize,
    pub requests_seen: AtomicUsize,
}

struct AppState {
    cfg: ServerConfig,
    stats: Arc<Stats>,
}

pub struct TestServer {
    pub url: String,
    pub stats: Arc<Stats>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn authorized(cfg: &ServerConfig, headers: &HeaderMap) -> bool {
    match &cfg.token {
        None => true,
        Some(t) => headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == format!("Bearer {t}")),
    }
}

fn error(status: StatusCode, msg: &str) -> Response {
    (status, Json(json!({ "error": msg }))).into_response()
}

async fn health(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    st.stats.health_calls.fetch_add(1, Ordering::SeqCst);
    if !authorized(&st.cfg, &headers) {
        return error(StatusCode::UNAUTHORIZED, "unauthorized");
    }
    let status = if st.cfg.unhealthy { "loading" } else { "ok" };
    Json(json!({ "status": status, "model": MODEL })).into_response()
}

fn build_results(body: &Bytes) -> Result<Vec<Value>, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let reqs = v["requests"].as_array().ok_or("missing requests array")?;
    let mut out = Vec::with_capacity(reqs.len());
    for r in reqs {
        let id = r["id"].as_str().ok_or("request without id")?;
        let metric = r["metric"].as_str().ok_or("request without metric")?;
        if !["itm", "odf", "ctq", "su"].contains(&metric) {
            return Err(format!("unknown metric {metric}"));
        }
        r["prompt"].as_str().ok_or("request without prompt")?;
        let max = r["max_new_tokens"].as_u64().ok_or("request without max_new_tokens")?;
        let raw = format!("{}\nMock rationale.", expected_score(id, metric));
        out.push(json!({
            "id": id,
            "metric": metric,
            "raw": first_tokens(&raw, max as usize),
            "model": MODEL,
        }));
    }
    Ok(out)
}

async fn score(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let call = st.stats.score_calls.fetch_add(1, Ordering::SeqCst);
    if !authorized(&st.cfg, &headers) {
        return error(StatusCode::UNAUTHORIZED, "unauthorized");
    }
    let now = st.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.stats.peak.fetch_max(now, Ordering::SeqCst);
    if !st.cfg.latency.is_zero() {
        tokio::time::sleep(st.cfg.latency).await;
    }
    let resp = if call < st.cfg.fail_first {
        error(StatusCode::SERVICE_UNAVAILABLE, "warming up")
    } else {
        match build_results(&body) {
            Ok(results) => {
                st.stats.requests_seen.fetch_add(results.len(), Ordering::SeqCst);
                Json(json!({ "results": results })).into_response()
            }
            Err(msg) => error(StatusCode::BAD_REQUEST, &msg),
        }
    };
    st.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    resp
}

pub fn spawn(cfg: ServerConfig) -> TestServer {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let stats = Arc::new(Stats::default());
    let state = Arc::new(AppState {
        cfg,
        stats: stats.clone(),
    });
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/health", get(health))
                .route("/v1/score", post(score))
                .with_state(state);
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
    });
    TestServer {
        url,
        stats,
        shutdown: Some(tx),
        thread: Some(thread),
    }
}
