mod common;

use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use mtfilter::domain::ImageRef;
use mtfilter::scorer::{
    score_batch, BatchOptions, HttpBackend, RetryPolicy, ScoreBackend, ScorerEndpoint, WireRequest,
};
use mtfilter::{Error, ImageTextPair, Metric, Result, ScoreRecord};

use common::{expected_score, spawn, ServerConfig};

fn pairs(n: usize) -> Vec<Result<ImageTextPair>> {
    (0..n)
        .map(|i| {
            Ok(ImageTextPair::new(format!("id-{i}"), format!("caption {i}"))
                .with_image(ImageRef::Url(format!("https://example.com/{i}.jpg"))))
        })
        .collect()
}

fn backend(url: &str, token: Option<&str>) -> HttpBackend {
    HttpBackend::new(url, Duration::from_secs(10), token.map(str::to_owned)).unwrap()
}

fn opts(metrics: Vec<Metric>, concurrency: usize) -> BatchOptions {
    BatchOptions {
        metrics,
        concurrency,
        retry: RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 5,
            jitter: 0.2,
        },
        ..BatchOptions::default()
    }
}

#[test]
fn round_trip_recovers_service_scores() {
    let server = spawn(ServerConfig::default());
    let b = backend(&server.url, None);
    let mut out: Vec<ScoreRecord> = Vec::new();
    let summary = score_batch(pairs(250), &b, &opts(Metric::ALL.to_vec(), 8), None, &mut out).unwrap();
    assert_eq!(summary.model, "mock-fnv");
    assert_eq!(summary.scored, 250);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.pair_id, format!("id-{i}"));
        assert_eq!(r.provenance, "mock-fnv");
        for m in Metric::ALL {
            assert_eq!(
                u64::from(r.get(m).unwrap().value()),
                expected_score(&r.pair_id, m.as_str())
            );
        }
    }
    // One request per pair, carrying every metric.
    assert_eq!(server.stats.score_calls.load(Ordering::SeqCst), 250);
    assert_eq!(server.stats.requests_seen.load(Ordering::SeqCst), 1000);
}

#[test]
fn client_mock_matches_service_for_many_ids() {
    for i in 0..1000 {
        let id = format!("gen-{i}-{}", i * 7919);
        for m in Metric::ALL {
            assert_eq!(
                u64::from(mtfilter::scorer::mock_score(&id, m).value()),
                expected_score(&id, m.as_str())
            );
        }
    }
}

#[test]
fn batch_results_keep_request_order_and_truncate() {
    let server = spawn(ServerConfig::default());
    let b = backend(&server.url, None);
    assert_eq!(b.health().unwrap(), "mock-fnv");
    let reqs: Vec<WireRequest> = ["c", "a", "b"]
        .iter()
        .map(|id| WireRequest {
            id: (*id).to_owned(),
            metric: Metric::Odf,
            prompt: "p".into(),
            image: ImageRef::None,
            max_new_tokens: 1,
        })
        .collect();
    let res = b.score(&reqs).unwrap();
    let ids: Vec<_> = res.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["c", "a", "b"]);
    for r in &res {
        assert_eq!(r.raw, expected_score(&r.id, "odf").to_string());
    }
}

#[test]
fn bearer_token_is_sent() {
    let server = spawn(ServerConfig {
        token: Some("s3cret".into()),
        ..ServerConfig::default()
    });
    let mut out: Vec<ScoreRecord> = Vec::new();
    let err = score_batch(
        pairs(3),
        &backend(&server.url, None),
        &opts(vec![Metric::Itm], 2),
        None,
        &mut out,
    )
    .unwrap_err();
    assert!(matches!(err, Error::EndpointUnreachable(_)), "{err}");
    assert_eq!(server.stats.score_calls.load(Ordering::SeqCst), 0);

    let wrong = score_batch(
        pairs(3),
        &backend(&server.url, Some("nope")),
        &opts(vec![Metric::Itm], 2),
        None,
        &mut out,
    );
    assert!(wrong.is_err());

    let ok = score_batch(
        pairs(3),
        &backend(&server.url, Some("s3cret")),
        &opts(vec![Metric::Itm], 2),
        None,
        &mut out,
    )
    .unwrap();
    assert_eq!(ok.scored, 3);
}

#[test]
fn unhealthy_service_fails_before_scoring() {
    let server = spawn(ServerConfig {
        unhealthy: true,
        ..ServerConfig::default()
    });
    let mut out: Vec<ScoreRecord> = Vec::new();
    let err = score_batch(
        pairs(5),
        &backend(&server.url, None),
        &opts(vec![Metric::Su], 2),
        None,
        &mut out,
    )
    .unwrap_err();
    assert!(matches!(err, Error::EndpointUnreachable(_)));
    assert_eq!(server.stats.health_calls.load(Ordering::SeqCst), 1);
    assert_eq!(server.stats.score_calls.load(Ordering::SeqCst), 0);

    let nothing = ScorerEndpoint::new("http://127.0.0.1:9").connect().unwrap();
    assert!(matches!(nothing.health(), Err(Error::EndpointUnreachable(_))));
}

#[test]
fn transient_failures_are_retried() {
    let server = spawn(ServerConfig {
        fail_first: 2,
        ..ServerConfig::default()
    });
    let mut out: Vec<ScoreRecord> = Vec::new();
    // Concurrency 1 so the two failures hit the same pair.
    let s = score_batch(
        pairs(4),
        &backend(&server.url, None),
        &opts(vec![Metric::Ctq], 1),
        None,
        &mut out,
    )
    .unwrap();
    assert_eq!(s.scored, 4);
    assert_eq!(server.stats.score_calls.load(Ordering::SeqCst), 6);
}

#[test]
fn malformed_request_is_rejected() {
    let server = spawn(ServerConfig::default());
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(format!("{}/v1/score", server.url))
        .body(r#"{"requests":[{"id":"a"}]}"#)
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.json().unwrap();
    assert!(body["error"].is_string());
}

#[test]
fn in_flight_never_exceeds_concurrency() {
    // 100 ms per request, 64 requests, 8 in flight: about 8 rounds.
    let server = spawn(ServerConfig {
        latency: Duration::from_millis(100),
        ..ServerConfig::default()
    });
    let start = Instant::now();
    let mut out: Vec<ScoreRecord> = Vec::new();
    let s = score_batch(
        pairs(64),
        &backend(&server.url, None),
        &opts(vec![Metric::Itm], 8),
        None,
        &mut out,
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert_eq!(s.scored, 64);
    let peak = server.stats.peak.load(Ordering::SeqCst);
    assert!(peak <= 8, "peak {peak}");
    assert!(peak >= 2, "requests never overlapped (peak {peak})");
    assert!(elapsed < Duration::from_millis(1600), "took {elapsed:?}");

    for c in [1, 3] {
        let server = spawn(ServerConfig {
            latency: Duration::from_millis(10),
            ..ServerConfig::default()
        });
        let mut out: Vec<ScoreRecord> = Vec::new();
        score_batch(
            pairs(24),
            &backend(&server.url, None),
            &opts(vec![Metric::Odf], c),
            None,
            &mut out,
        )
        .unwrap();
        assert!(server.stats.peak.load(Ordering::SeqCst) <= c);
    }
}
