//! Scorer backends and the HTTP wire protocol they speak.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{ImageRef, Metric, QualityScore};
use crate::error::{Error, Result};

/// One item of a `POST /v1/score` body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub metric: Metric,
    pub prompt: String,
    pub image: ImageRef,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequestBody {
    pub requests: Vec<WireRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResult {
    pub id: String,
    pub metric: Metric,
    pub raw: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreResponseBody {
    pub results: Vec<WireResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

/// Anything that can turn scoring requests into raw generated text.
///
/// Implementations must be safe to call from many worker threads at once.
/// Errors returned from [`ScoreBackend::score`] are treated as transient and
/// retried by the batch driver.
pub trait ScoreBackend: Send + Sync {
    /// Returns the model name when the backend is ready to serve.
    fn health(&self) -> Result<String>;

    fn score(&self, requests: &[WireRequest]) -> Result<Vec<WireResult>>;
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for &B {
    fn health(&self) -> Result<String> {
        (**self).health()
    }

    fn score(&self, requests: &[WireRequest]) -> Result<Vec<WireResult>> {
        (**self).score(requests)
    }
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for Box<B> {
    fn health(&self) -> Result<String> {
        (**self).health()
    }

    fn score(&self, requests: &[WireRequest]) -> Result<Vec<WireResult>> {
        (**self).score(requests)
    }
}

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub const MOCK_MODEL: &str = "mock-fnv";

/// Deterministic mock score: FNV-1a of `"{pair_id}:{metric}"` modulo 101.
pub fn mock_score(pair_id: &str, metric: Metric) -> QualityScore {
    let key = format!("{pair_id}:{}", metric.as_str());
    QualityScore::new((fnv1a64(key.as_bytes()) % 101) as i64).expect("modulus bound")
}

/// The mock model's full answer, rationalization shaped.
pub fn mock_raw(pair_id: &str, metric: Metric) -> String {
    format!("{}\nMock rationale.", mock_score(pair_id, metric))
}

/// Cuts `text` after its first `max_tokens` whitespace-delimited tokens,
/// keeping the original separators between them.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                in_token = false;
                if seen == max_tokens {
                    return &text[..i];
                }
            }
        } else if !in_token {
            in_token = true;
            seen += 1;
        }
    }
    text
}

/// In-process stand-in for a scoring model, bit-compatible with the
/// reference mock service.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    latency: Option<Duration>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps this long per call, to exercise concurrency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }
}

impl ScoreBackend for MockBackend {
    fn health(&self) -> Result<String> {
        Ok(MOCK_MODEL.to_owned())
    }

    fn score(&self, requests: &[WireRequest]) -> Result<Vec<WireResult>> {
        if let Some(l) = self.latency {
            std::thread::sleep(l);
        }
        Ok(requests
            .iter()
            .map(|r| {
                let raw = mock_raw(&r.id, r.metric);
                WireResult {
                    id: r.id.clone(),
                    metric: r.metric,
                    raw: truncate_tokens(&raw, r.max_new_tokens as usize).to_owned(),
                    model: MOCK_MODEL.to_owned(),
                }
            })
            .collect())
    }
}

/// Client for a remote scorer speaking the `/v1` protocol.
pub struct HttpBackend {
    base: String,
    client: reqwest::blocking::Client,
    auth_token: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration, auth_token: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::EndpointUnreachable(e.to_string()))?;
        Ok(HttpBackend {
            base: base_url.trim_end_matches('/').to_owned(),
            client,
            auth_token,
        })
    }

    fn with_auth(&self, req: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.auth_token {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }
}

impl ScoreBackend for HttpBackend {
    fn health(&self) -> Result<String> {
        let url = format!("{}/v1/health", self.base);
        let resp = self
            .with_auth(self.client.get(&url))
            .send()
            .map_err(|e| Error::EndpointUnreachable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::EndpointUnreachable(format!("{url}: HTTP {}", resp.status())));
        }
        let health: HealthResponse = resp
            .json()
            .map_err(|e| Error::EndpointUnreachable(format!("{url}: {e}")))?;
        if health.status != "ok" {
            return Err(Error::EndpointUnreachable(format!("{url}: status {:?}", health.status)));
        }
        Ok(health.model)
    }

    fn score(&self, requests: &[WireRequest]) -> Result<Vec<WireResult>> {
        let url = format!("{}/v1/score", self.base);
        let body = ScoreRequestBody {
            requests: requests.to_vec(),
        };
        let resp = self
            .with_auth(self.client.post(&url).json(&body))
            .send()
            .map_err(|e| Error::EndpointUnreachable(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::EndpointUnreachable(format!("{url}: HTTP {status}: {text}")));
        }
        let parsed: ScoreResponseBody = resp
            .json()
            .map_err(|e| Error::EndpointUnreachable(format!("{url}: bad response: {e}")))?;
        Ok(parsed.results)
    }
}
