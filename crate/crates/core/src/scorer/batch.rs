//! Bounded-concurrency batch scoring with retries and checkpointed progress.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::domain::{ImageTextPair, Metric, ScoreRecord};
use crate::error::{Error, Result};
use crate::ingest::{JsonlWriter, ProgressLog};

use super::backend::{HttpBackend, MockBackend, ScoreBackend, WireRequest};
use super::parse::parse_score;
use super::prompt::{assemble_prompt, PromptMode, TeacherPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before the first retry; doubles for each further retry.
    pub base_backoff_ms: u64,
    /// Relative jitter applied to each wait, e.g. 0.2 for ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 1000,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::InvalidConfig("jitter must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Nominal wait before retry number `retry` (1-based), without jitter.
    pub fn nominal_backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(20);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor))
    }

    pub fn backoff<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let nominal = self.nominal_backoff(retry).as_secs_f64();
        let scale = if self.jitter > 0.0 {
            1.0 + rng.random_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * scale)
    }
}

/// What happens to a pair whose scoring still fails after all retries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailurePolicy {
    /// Stop the run and return the error.
    #[default]
    Abort,
    /// Set the pair aside in the summary and keep going.
    Quarantine,
}

/// Where and how to reach a scorer.
#[derive(Debug, Clone)]
pub struct ScorerEndpoint {
    /// `http(s)://…` base URL, or `mock://` for the in-process mock.
    pub url: String,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub auth_token: Option<String>,
    pub timeout: Duration,
}

impl ScorerEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        ScorerEndpoint {
            url: url.into(),
            concurrency: 8,
            retry: RetryPolicy::default(),
            auth_token: None,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.url == "mock" || self.url.starts_with("mock://")
    }

    /// `mock://?latency_ms=N` adds a per-call delay to the mock.
    fn mock_latency_ms(&self) -> Result<Option<u64>> {
        let Some((_, query)) = self.url.split_once('?') else {
            return Ok(None);
        };
        let mut latency = None;
        for kv in query.split('&').filter(|kv| !kv.is_empty()) {
            match kv.split_once('=') {
                Some(("latency_ms", v)) => {
                    let ms = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad mock latency `{v}`")))?;
                    latency = Some(ms);
                }
                _ => return Err(Error::InvalidConfig(format!("unknown mock option `{kv}`"))),
            }
        }
        Ok(latency)
    }

    pub fn connect(&self) -> Result<Box<dyn ScoreBackend>> {
        if self.concurrency == 0 {
            return Err(Error::InvalidConfig("concurrency must be at least 1".into()));
        }
        if self.is_mock() {
            let mut mock = MockBackend::new();
            if let Some(ms) = self.mock_latency_ms()? {
                mock = mock.with_latency(Duration::from_millis(ms));
            }
            Ok(Box::new(mock))
        } else {
            Ok(Box::new(HttpBackend::new(
                &self.url,
                self.timeout,
                self.auth_token.clone(),
            )?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub metrics: Vec<Metric>,
    pub mode: PromptMode,
    pub path: TeacherPath,
    pub max_new_tokens: u32,
    /// Hard cap on requests in flight.
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub on_failure: FailurePolicy,
    /// Records between flushes of the sink and the progress log.
    pub checkpoint_every: usize,
    /// Emit records in input order rather than completion order.
    pub ordered: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            metrics: vec![Metric::Itm],
            mode: PromptMode::Rationalization,
            path: TeacherPath::Vision,
            max_new_tokens: 4,
            concurrency: 8,
            retry: RetryPolicy::default(),
            on_failure: FailurePolicy::Abort,
            checkpoint_every: 256,
            ordered: true,
        }
    }
}

impl BatchOptions {
    fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("no metrics requested".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidConfig("concurrency must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        self.retry.validate()
    }
}

/// Destination for finished records.
pub trait RecordSink {
    fn emit(&mut self, record: &ScoreRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl RecordSink for Vec<ScoreRecord> {
    fn emit(&mut self, record: &ScoreRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl RecordSink for JsonlWriter {
    fn emit(&mut self, record: &ScoreRecord) -> Result<()> {
        self.write(record)
    }

    fn flush(&mut self) -> Result<()> {
        JsonlWriter::flush(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quarantined {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub model: String,
    pub scored: usize,
    pub already_done: usize,
    pub quarantined: Vec<Quarantined>,
}

enum Outcome {
    Scored(ScoreRecord),
    Failed(String, Error),
    Input(Error),
}

/// Scores one pair on every requested metric, retrying failed metrics.
fn score_pair<B: ScoreBackend + ?Sized>(
    backend: &B,
    pair: &ImageTextPair,
    opts: &BatchOptions,
    fallback_model: &str,
) -> Result<ScoreRecord> {
    let mut prompts = BTreeMap::new();
    for &m in &opts.metrics {
        prompts.insert(m, assemble_prompt(m, pair, opts.mode, opts.path)?);
    }
    let mut record = ScoreRecord::new(pair.id.clone(), fallback_model);
    let mut model: Option<String> = None;
    let mut last_error: BTreeMap<Metric, String> = BTreeMap::new();
    let mut rng = rand::rng();

    for attempt in 1..=opts.retry.max_attempts {
        let pending: Vec<Metric> = opts
            .metrics
            .iter()
            .copied()
            .filter(|m| record.get(*m).is_none())
            .collect();
        if pending.is_empty() {
            break;
        }
        if attempt > 1 {
            std::thread::sleep(opts.retry.backoff(attempt - 1, &mut rng));
        }
        let requests: Vec<WireRequest> = pending
            .iter()
            .map(|&m| WireRequest {
                id: pair.id.clone(),
                metric: m,
                prompt: prompts[&m].clone(),
                image: pair.image_ref.clone(),
                max_new_tokens: opts.max_new_tokens,
            })
            .collect();
        match backend.score(&requests) {
            Err(e) => {
                debug!(pair = %pair.id, attempt, "request failed: {e}");
                for &m in &pending {
                    last_error.insert(m, e.to_string());
                }
            }
            Ok(results) => {
                for &m in &pending {
                    let Some(r) = results.iter().find(|r| r.metric == m && r.id == pair.id) else {
                        last_error.insert(m, "no result returned".into());
                        continue;
                    };
                    match parse_score(&r.raw, opts.mode) {
                        Ok(score) => {
                            record.scores.insert(m, score);
                            model.get_or_insert_with(|| r.model.clone());
                        }
                        Err(e) => {
                            last_error.insert(m, e.to_string());
                        }
                    }
                }
            }
        }
    }
    if let Some(&missing) = opts.metrics.iter().find(|m| record.get(**m).is_none()) {
        return Err(Error::ScoreFailed {
            pair_id: pair.id.clone(),
            metric: missing,
            cause: last_error.remove(&missing).unwrap_or_default(),
        });
    }
    if let Some(model) = model {
        record.provenance = model;
    }
    Ok(record)
}

/// Scores every pair on every metric in `opts`.
///
/// The backend's health check runs first; an unhealthy backend fails the
/// call before any scoring request. At most `opts.concurrency` requests are
/// in flight. Pairs already recorded in `log` are skipped, and a pair's id is
/// appended to the log only after its record has been handed to `sink`. On
/// each checkpoint the sink is flushed before the log, so a crash can leave
/// records without log entries but never the reverse.
pub fn score_batch<I, B, S>(
    pairs: I,
    backend: &B,
    opts: &BatchOptions,
    mut log: Option<&mut ProgressLog>,
    sink: &mut S,
) -> Result<BatchSummary>
where
    I: IntoIterator<Item = Result<ImageTextPair>>,
    I::IntoIter: Send,
    B: ScoreBackend + ?Sized,
    S: RecordSink + ?Sized,
{
    opts.validate()?;
    let model = backend.health().map_err(|e| match e {
        Error::EndpointUnreachable(_) => e,
        other => Error::EndpointUnreachable(other.to_string()),
    })?;

    let completed: HashSet<String> = log.as_ref().map(|l| l.completed().clone()).unwrap_or_default();
    let mut summary = BatchSummary {
        model: model.clone(),
        ..BatchSummary::default()
    };
    let stop = AtomicBool::new(false);
    let (job_tx, job_rx) = bounded::<(usize, ImageTextPair)>(opts.concurrency * 2);
    let (out_tx, out_rx) = unbounded::<(usize, Outcome)>();
    let pairs = pairs.into_iter();

    let result = std::thread::scope(|scope| -> Result<usize> {
        let feeder_out = out_tx.clone();
        let stop_ref = &stop;
        let completed_ref = &completed;
        let feeder = scope.spawn(move || {
            let mut seen = HashSet::new();
            let mut skipped = 0usize;
            let mut seq = 0usize;
            for item in pairs {
                if stop_ref.load(Ordering::Relaxed) {
                    break;
                }
                let pair = match item {
                    Ok(p) => p,
                    Err(e) => {
                        let _ = feeder_out.send((seq, Outcome::Input(e)));
                        break;
                    }
                };
                if !seen.insert(pair.id.clone()) {
                    let _ = feeder_out.send((seq, Outcome::Input(Error::DuplicateId(pair.id))));
                    break;
                }
                if completed_ref.contains(&pair.id) {
                    skipped += 1;
                    continue;
                }
                if job_tx.send((seq, pair)).is_err() {
                    break;
                }
                seq += 1;
            }
            skipped
        });

        for _ in 0..opts.concurrency {
            let jobs = job_rx.clone();
            let out = out_tx.clone();
            let stop_ref = &stop;
            let model = model.as_str();
            scope.spawn(move || {
                for (seq, pair) in jobs.iter() {
                    if stop_ref.load(Ordering::Relaxed) {
                        continue;
                    }
                    let outcome = match score_pair(backend, &pair, opts, model) {
                        Ok(r) => Outcome::Scored(r),
                        Err(e) => Outcome::Failed(pair.id, e),
                    };
                    if out.send((seq, outcome)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(out_tx);
        drop(job_rx);

        let run = (|| -> Result<()> {
            let mut pending: BTreeMap<usize, Outcome> = BTreeMap::new();
            let mut next = 0usize;
            let mut since_checkpoint = 0usize;
            for (seq, outcome) in out_rx.iter() {
                let ready: Vec<Outcome> = if opts.ordered {
                    pending.insert(seq, outcome);
                    let mut ready = Vec::new();
                    while let Some(o) = pending.remove(&next) {
                        ready.push(o);
                        next += 1;
                    }
                    // Input errors are sequenced after the last job, so they
                    // surface as soon as everything before them is out.
                    ready
                } else {
                    vec![outcome]
                };
                for outcome in ready {
                    match outcome {
                        Outcome::Scored(record) => {
                            sink.emit(&record)?;
                            if let Some(log) = log.as_deref_mut() {
                                log.record(&record.pair_id)?;
                            }
                            summary.scored += 1;
                            since_checkpoint += 1;
                            if since_checkpoint >= opts.checkpoint_every {
                                since_checkpoint = 0;
                                sink.flush()?;
                                if let Some(log) = log.as_deref_mut() {
                                    log.flush()?;
                                }
                            }
                        }
                        Outcome::Failed(pair_id, e) => match opts.on_failure {
                            FailurePolicy::Abort => return Err(e),
                            FailurePolicy::Quarantine => {
                                warn!(pair = %pair_id, "quarantined: {e}");
                                summary.quarantined.push(Quarantined {
                                    pair_id,
                                    error: e.to_string(),
                                });
                            }
                        },
                        Outcome::Input(e) => return Err(e),
                    }
                }
            }
            Ok(())
        })();

        // Flush whatever was emitted, even on failure, so the log and the
        // sink agree about completed work.
        let flushed = sink.flush().and_then(|_| match &mut log {
            Some(log) => log.flush(),
            None => Ok(()),
        });
        if run.is_err() {
            stop.store(true, Ordering::Relaxed);
        }
        drop(out_rx);
        let skipped = feeder.join().expect("feeder thread panicked");
        run?;
        flushed?;
        Ok(skipped)
    });
    summary.already_done = result?;
    Ok(summary)
}

/// Brings a score file and its progress log back into agreement after an
/// interrupted run, and returns the ids that count as done.
///
/// A pair counts as done when its id is in the log and a complete record for
/// it is in the score file. The score file is rewritten to hold exactly
/// those records (first occurrence, file order) and the log to hold exactly
/// those ids. Torn trailing lines in either file are dropped.
pub fn reconcile_score_file(scores: &Path, log: &Path) -> Result<HashSet<String>> {
    let logged = ProgressLog::replay(log)?;
    let text = match std::fs::read_to_string(scores) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(scores, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut done = HashSet::new();
    let mut kept_lines = String::with_capacity(complete.len());
    let mut kept_ids = String::new();
    for line in complete.lines() {
        let Ok(rec) = serde_json::from_str::<ScoreRecord>(line) else {
            continue;
        };
        if logged.contains(&rec.pair_id) && done.insert(rec.pair_id.clone()) {
            kept_lines.push_str(line);
            kept_lines.push('\n');
            kept_ids.push_str(&rec.pair_id);
            kept_ids.push('\n');
        }
    }
    replace_file(scores, &kept_lines)?;
    replace_file(log, &kept_ids)?;
    Ok(done)
}

fn replace_file(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::backend::{mock_score, WireResult};
    use std::sync::atomic::AtomicUsize;
    use std::sync::Mutex;

    fn pairs(n: usize) -> Vec<Result<ImageTextPair>> {
        (0..n)
            .map(|i| Ok(ImageTextPair::new(format!("p{i}"), "a caption")))
            .collect()
    }

    fn fast_opts(metrics: Vec<Metric>) -> BatchOptions {
        BatchOptions {
            metrics,
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 1,
                jitter: 0.2,
            },
            checkpoint_every: 8,
            ..BatchOptions::default()
        }
    }

    #[test]
    fn mock_batch_is_complete_and_deterministic() {
        let opts = fast_opts(vec![Metric::Itm, Metric::Odf]);
        let mut first = Vec::new();
        let summary = score_batch(pairs(100), &MockBackend::new(), &opts, None, &mut first).unwrap();
        assert_eq!(summary.scored, 100);
        assert_eq!(summary.model, "mock-fnv");
        for (i, r) in first.iter().enumerate() {
            assert_eq!(r.pair_id, format!("p{i}"));
            assert_eq!(r.scores.len(), 2);
            assert_eq!(r.get(Metric::Itm), Some(mock_score(&r.pair_id, Metric::Itm)));
            assert_eq!(r.provenance, "mock-fnv");
        }
        let mut second = Vec::new();
        score_batch(pairs(100), &MockBackend::new(), &opts, None, &mut second).unwrap();
        assert_eq!(first, second);
    }

    struct Down;
    impl ScoreBackend for Down {
        fn health(&self) -> Result<String> {
            Err(Error::EndpointUnreachable("down".into()))
        }
        fn score(&self, _: &[WireRequest]) -> Result<Vec<WireResult>> {
            panic!("no request may be sent to an unhealthy backend");
        }
    }

    #[test]
    fn unhealthy_endpoint_fails_first() {
        let mut out = Vec::new();
        let err = score_batch(pairs(3), &Down, &fast_opts(vec![Metric::Itm]), None, &mut out).unwrap_err();
        assert!(matches!(err, Error::EndpointUnreachable(_)));
        assert!(out.is_empty());
    }

    /// Fails the first `fail_first` calls for each pair, then delegates.
    struct Flaky {
        fail_first: usize,
        calls: Mutex<BTreeMap<String, usize>>,
    }
    impl ScoreBackend for Flaky {
        fn health(&self) -> Result<String> {
            Ok("flaky".into())
        }
        fn score(&self, reqs: &[WireRequest]) -> Result<Vec<WireResult>> {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(reqs[0].id.clone()).or_default();
            *n += 1;
            if *n <= self.fail_first {
                return Err(Error::EndpointUnreachable("transient".into()));
            }
            MockBackend::new().score(reqs)
        }
    }

    #[test]
    fn retries_transient_failures() {
        let backend = Flaky {
            fail_first: 2,
            calls: Mutex::default(),
        };
        let mut out = Vec::new();
        let s = score_batch(pairs(5), &backend, &fast_opts(vec![Metric::Su]), None, &mut out).unwrap();
        assert_eq!(s.scored, 5);
        assert!(backend.calls.lock().unwrap().values().all(|&n| n == 3));
    }

    #[test]
    fn exhausted_retries_abort_or_quarantine() {
        let backend = Flaky {
            fail_first: 3,
            calls: Mutex::default(),
        };
        let mut out = Vec::new();
        let err = score_batch(pairs(2), &backend, &fast_opts(vec![Metric::Ctq]), None, &mut out).unwrap_err();
        assert!(
            matches!(
                err,
                Error::ScoreFailed {
                    metric: Metric::Ctq,
                    ..
                }
            ),
            "{err}"
        );

        let backend = Flaky {
            fail_first: 3,
            calls: Mutex::default(),
        };
        let opts = BatchOptions {
            on_failure: FailurePolicy::Quarantine,
            ..fast_opts(vec![Metric::Ctq])
        };
        let mut out = Vec::new();
        let s = score_batch(pairs(4), &backend, &opts, None, &mut out).unwrap();
        assert_eq!(s.scored, 0);
        assert_eq!(s.quarantined.len(), 4);
    }

    /// Answers with unparseable text.
    struct Mute;
    impl ScoreBackend for Mute {
        fn health(&self) -> Result<String> {
            Ok("mute".into())
        }
        fn score(&self, reqs: &[WireRequest]) -> Result<Vec<WireResult>> {
            Ok(reqs
                .iter()
                .map(|r| WireResult {
                    id: r.id.clone(),
                    metric: r.metric,
                    raw: "no idea".into(),
                    model: "mute".into(),
                })
                .collect())
        }
    }

    #[test]
    fn unparseable_output_fails_after_retries() {
        let mut out = Vec::new();
        let err = score_batch(pairs(1), &Mute, &fast_opts(vec![Metric::Itm]), None, &mut out).unwrap_err();
        match err {
            Error::ScoreFailed { cause, .. } => assert!(cause.contains("no score found"), "{cause}"),
            other => panic!("unexpected {other}"),
        }
    }

    struct Gauge {
        inner: MockBackend,
        now: AtomicUsize,
        peak: AtomicUsize,
    }
    impl ScoreBackend for Gauge {
        fn health(&self) -> Result<String> {
            self.inner.health()
        }
        fn score(&self, reqs: &[WireRequest]) -> Result<Vec<WireResult>> {
            let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(n, Ordering::SeqCst);
            let r = self.inner.score(reqs);
            self.now.fetch_sub(1, Ordering::SeqCst);
            r
        }
    }

    #[test]
    fn in_flight_never_exceeds_cap() {
        for cap in [1usize, 4, 32] {
            let gauge = Gauge {
                inner: MockBackend::new().with_latency(Duration::from_millis(2)),
                now: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            };
            let opts = BatchOptions {
                concurrency: cap,
                ..fast_opts(vec![Metric::Itm])
            };
            let mut out = Vec::new();
            score_batch(pairs(128), &gauge, &opts, None, &mut out).unwrap();
            let peak = gauge.peak.load(Ordering::SeqCst);
            assert!(peak <= cap, "cap {cap} peak {peak}");
            assert!(peak >= 1);
            assert_eq!(out.len(), 128);
        }
    }

    #[test]
    fn input_errors_and_duplicates_abort() {
        let mut input = pairs(3);
        input.push(Err(Error::EmptyId));
        let mut out = Vec::new();
        let err = score_batch(
            input,
            &MockBackend::new(),
            &fast_opts(vec![Metric::Itm]),
            None,
            &mut out,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyId));
        assert_eq!(out.len(), 3);

        let dup = vec![Ok(ImageTextPair::new("a", "x")), Ok(ImageTextPair::new("a", "y"))];
        let mut out = Vec::new();
        let err = score_batch(dup, &MockBackend::new(), &fast_opts(vec![Metric::Itm]), None, &mut out).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }

    #[test]
    fn log_skips_completed_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("done.log");
        {
            let mut log = ProgressLog::open(&path).unwrap();
            log.record("p1").unwrap();
            log.flush().unwrap();
        }
        let mut log = ProgressLog::open(&path).unwrap();
        let mut out = Vec::new();
        let s = score_batch(
            pairs(3),
            &MockBackend::new(),
            &fast_opts(vec![Metric::Itm]),
            Some(&mut log),
            &mut out,
        )
        .unwrap();
        assert_eq!(s.already_done, 1);
        let ids: Vec<_> = out.iter().map(|r| r.pair_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p2"]);
        drop(log);
        assert_eq!(ProgressLog::replay(&path).unwrap().len(), 3);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.nominal_backoff(1), Duration::from_secs(1));
        assert_eq!(p.nominal_backoff(2), Duration::from_secs(2));
        assert_eq!(p.nominal_backoff(3), Duration::from_secs(4));
        let mut rng = rand::rng();
        for retry in 1..=3 {
            let nominal = p.nominal_backoff(retry).as_secs_f64();
            for _ in 0..100 {
                let d = p.backoff(retry, &mut rng).as_secs_f64();
                assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9);
            }
        }
    }

    #[test]
    fn reconcile_drops_unlogged_and_torn_records() {
        let dir = tempfile::tempdir().unwrap();
        let scores = dir.path().join("s.jsonl");
        let log = dir.path().join("s.progress");
        let line = |id: &str| {
            let rec = ScoreRecord::new(id, "mock-fnv").with(Metric::Itm, mock_score(id, Metric::Itm));
            serde_json::to_string(&rec).unwrap() + "\n"
        };
        let body = [line("a"), line("b"), line("a"), line("c")].concat() + "{\"id\":\"d";
        std::fs::write(&scores, body).unwrap();
        std::fs::write(&log, "a\nb\nz\nc").unwrap();
        let done = reconcile_score_file(&scores, &log).unwrap();
        assert_eq!(done, HashSet::from(["a".to_owned(), "b".to_owned()]));
        assert_eq!(std::fs::read_to_string(&scores).unwrap(), line("a") + &line("b"));
        assert_eq!(std::fs::read_to_string(&log).unwrap(), "a\nb\n");

        let fresh = dir.path().join("none.jsonl");
        assert!(reconcile_score_file(&fresh, &dir.path().join("none.progress"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mock_endpoint_options() {
        assert!(ScorerEndpoint::new("mock").connect().is_ok());
        assert!(ScorerEndpoint::new("mock://?latency_ms=3").connect().is_ok());
        assert!(ScorerEndpoint::new("mock://?latency_ms=x").connect().is_err());
        assert!(ScorerEndpoint::new("mock://?speed=3").connect().is_err());
        assert!(ScorerEndpoint::new("mock://?latency_ms=1&speed=3").connect().is_err());
    }
}
