use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use mtfilter::config::{config_digest, RunConfig, RunManifest, ShardEntry};
use mtfilter::curation::{
    assemble_mixture, balanced_sample, emit_teacher_jobs, kmeans, ClusterReport, InstructionRecord, JobOptions,
    MixtureSpec,
};
use mtfilter::domain::parse_metric_list;
use mtfilter::filter::{apply_filter_par, compute_threshold, histograms_for, resolve_spec, Combiner, FilterSpec};
use mtfilter::ingest::{open_pair_stream, read_jsonl, JsonlWriter, ProgressLog, SourceFormat};
use mtfilter::scorer::{
    reconcile_score_file, score_batch, BatchOptions, EmbeddingTable, FailurePolicy, PromptMode, ScorerEndpoint,
    TeacherPath,
};
use mtfilter::stats::{
    distribution_report, fraction_sweep, load_human_scores, pearson, permutation_test, spearman, CorrelationKind,
    PairedSample, DEFAULT_FRACTIONS,
};
use mtfilter::{Error, Exec, Metric, ScoreRecord};

use crate::args::{
    Cli, ClusterArgs, Command, Common, CorrelateArgs, CurateCommand, ExecArg, JobsArgs, MixtureArgs, ModeArg,
    ReportArgs, SampleArgs, ScoreArgs, SweepArgs,
};
use crate::CliError;

type CliResult<T = ()> = std::result::Result<T, CliError>;

pub const AUTH_ENV: &str = "MTF_AUTH_TOKEN";

pub fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli.common)?;
    let c = &cli.common;
    match cli.command {
        Command::Score(a) => score(&cfg, c, &a),
        Command::Threshold => threshold(&cfg),
        Command::Filter => filter(&cfg, c),
        Command::Curate(CurateCommand::Cluster(a)) => cluster(&cfg, c, &a),
        Command::Curate(CurateCommand::Jobs(a)) => jobs(&cfg, c, &a),
        Command::Curate(CurateCommand::Sample(a)) => sample(&cfg, c, &a),
        Command::Curate(CurateCommand::Mixture(a)) => mixture(&cfg, &a),
        Command::Correlate(a) => correlate(&cfg, &a),
        Command::Report(a) => report(&cfg, c, &a),
        Command::Sweep(a) => sweep(&cfg, &a),
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.pairs {
        cfg.pairs = Some(p.clone());
    }
    if let Some(p) = &c.scores {
        cfg.scores = Some(p.clone());
    }
    if let Some(p) = &c.out {
        cfg.out = Some(p.clone());
    }
    if let Some(e) = &c.endpoint {
        cfg.endpoint = Some(e.clone());
    }
    if let Some(m) = &c.metrics {
        cfg.metrics = parse_metric_list(m)?;
    }
    if let Some(f) = c.fraction {
        cfg.filter.fraction = f;
    }
    if let Some(k) = &c.combiner {
        cfg.filter.combiner = Some(k.parse::<Combiner>()?);
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.cluster.seed = s;
        cfg.sampler.seed = s;
    }
    if let Some(n) = c.concurrency {
        cfg.concurrency = n;
    }
    if let Some(e) = c.exec {
        cfg.exec = match e {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required for this command")))
}

fn mode_of(arg: Option<ModeArg>, default: PromptMode) -> PromptMode {
    match arg {
        Some(ModeArg::Rationalization) => PromptMode::Rationalization,
        Some(ModeArg::Cot) => PromptMode::Cot,
        None => default,
    }
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> CliResult<usize> {
    let mut w = JsonlWriter::create(path)?;
    let mut n = 0;
    for item in items {
        w.write(item)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

fn load_scores(cfg: &RunConfig) -> CliResult<Vec<ScoreRecord>> {
    Ok(read_jsonl(require(&cfg.scores, "--scores")?)?)
}

/// Rows a shard contributes (non-blank lines, minus a TSV header).
fn shard_rows(path: &Path, format: SourceFormat) -> CliResult<u64> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut n = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if !line.trim().is_empty() {
            n += 1;
        }
    }
    Ok(match format {
        SourceFormat::Tsv => n.saturating_sub(1),
        SourceFormat::Jsonl => n,
    })
}

fn score(cfg: &RunConfig, c: &Common, a: &ScoreArgs) -> CliResult {
    let pairs = require(&cfg.pairs, "--pairs")?;
    let out = require(&cfg.out, "--out")?;

    if let Some(table) = &a.embeddings {
        let table = EmbeddingTable::load(table)?;
        let records = table.score_records(cfg.metrics[0], cfg.exec)?;
        let n = write_jsonl(out, &records)?;
        return emit(
            None,
            &to_json(&serde_json::json!({ "model": "cosine-baseline", "scored": n }))?,
        );
    }

    let url = require(&cfg.endpoint, "--endpoint")?;
    let opts = BatchOptions {
        metrics: cfg.metrics.clone(),
        mode: mode_of(a.mode, cfg.scorer.mode),
        path: if a.text_only {
            TeacherPath::TextOnly
        } else {
            TeacherPath::Vision
        },
        max_new_tokens: a.max_new_tokens.unwrap_or(cfg.scorer.max_new_tokens),
        concurrency: cfg.concurrency,
        retry: cfg.scorer.retry.clone(),
        on_failure: if a.quarantine {
            FailurePolicy::Quarantine
        } else {
            cfg.scorer.on_failure
        },
        checkpoint_every: cfg.scorer.checkpoint_every,
        ordered: true,
    };
    let endpoint = ScorerEndpoint {
        url: url.clone(),
        concurrency: cfg.concurrency,
        retry: cfg.scorer.retry.clone(),
        auth_token: std::env::var(AUTH_ENV).ok().filter(|t| !t.is_empty()),
        timeout: Duration::from_millis(cfg.scorer.timeout_ms),
    };

    // Settings that change what lands in the score file; throughput knobs
    // are left out so a resumed run may use a different concurrency.
    let digest = config_digest(&serde_json::json!({
        "pairs": pairs,
        "metrics": opts.metrics,
        "mode": opts.mode,
        "path": opts.path,
        "max_new_tokens": opts.max_new_tokens,
        "endpoint": url,
        "ingest": cfg.ingest,
    }))?;
    let log_path = sibling(out, ".progress");
    let manifest_path = sibling(out, ".manifest.json");
    if c.resume {
        if manifest_path.exists() {
            let prev = RunManifest::load(&manifest_path)?;
            if prev.config_digest != digest {
                return Err(Error::InvalidConfig(
                    "scoring settings differ from the interrupted run; rerun without --resume".into(),
                )
                .into());
            }
        }
        reconcile_score_file(out, &log_path)?;
    } else if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
    }

    let source = cfg.ingest.source(pairs)?;
    let shards = source
        .shards
        .iter()
        .map(|p| {
            Ok(ShardEntry {
                path: p.clone(),
                count: shard_rows(p, source.format)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    RunManifest {
        run_id: format!("score-{}", &digest[..12]),
        shards,
        config_digest: digest.clone(),
        completed_log: Some(log_path.clone()),
    }
    .save(&manifest_path)?;

    let backend = endpoint.connect()?;
    let mut stream = open_pair_stream(&source)?;
    let mut log = ProgressLog::open(&log_path)?;
    let mut writer = if c.resume {
        JsonlWriter::append(out)?
    } else {
        JsonlWriter::create(out)?
    };
    let summary = score_batch(&mut stream, backend.as_ref(), &opts, Some(&mut log), &mut writer)?;
    writer.flush()?;
    log.flush()?;

    let body = serde_json::json!({
        "model": summary.model,
        "scored": summary.scored,
        "already_done": summary.already_done,
        "quarantined": summary.quarantined,
        "skipped_rows": stream.skipped(),
        "config_digest": digest,
    });
    emit(None, &to_json(&body)?)
}

#[derive(Serialize)]
struct ThresholdReport {
    fraction: f64,
    total: u64,
    thresholds: BTreeMap<Metric, u8>,
    retained: BTreeMap<Metric, u64>,
}

fn threshold(cfg: &RunConfig) -> CliResult {
    let records = load_scores(cfg)?;
    let hists = histograms_for(&records, &cfg.metrics, cfg.exec)?;
    let mut rep = ThresholdReport {
        fraction: cfg.filter.fraction,
        total: records.len() as u64,
        thresholds: BTreeMap::new(),
        retained: BTreeMap::new(),
    };
    for (m, h) in &hists {
        let t = compute_threshold(h, cfg.filter.fraction)?;
        rep.thresholds.insert(*m, t);
        rep.retained.insert(*m, h.retained_at(t));
    }
    emit(cfg.out.as_deref(), &to_json(&rep)?)
}

fn filter_spec(cfg: &RunConfig, c: &Common) -> CliResult<FilterSpec> {
    let spec = match &c.spec {
        Some(raw) => {
            let text = match raw.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.into(),
                    source: e,
                })?,
                None => raw.clone(),
            };
            serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?
        }
        None => FilterSpec {
            metrics: cfg.metrics.clone(),
            fraction: cfg.filter.fraction,
            combiner: cfg.filter.combiner,
            thresholds: BTreeMap::new(),
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn filter(cfg: &RunConfig, c: &Common) -> CliResult {
    let out = require(&cfg.out, "--out")?;
    let spec = filter_spec(cfg, c)?;
    let records = load_scores(cfg)?;
    let resolved = if spec.is_resolved() {
        spec
    } else {
        let hists = histograms_for(&records, &spec.metrics, cfg.exec)?;
        resolve_spec(&spec, &hists)?
    };
    let outcome = apply_filter_par(&records, &resolved, cfg.exec)?;
    let keep: HashSet<&str> = outcome.retained.iter().map(String::as_str).collect();

    match &cfg.pairs {
        Some(pairs) => {
            let source = cfg.ingest.source(pairs)?;
            let mut w = JsonlWriter::create(out)?;
            for pair in open_pair_stream(&source)? {
                let pair = pair?;
                if keep.contains(pair.id.as_str()) {
                    w.write(&pair)?;
                }
            }
            w.flush()?;
        }
        None => {
            write_jsonl(out, records.iter().filter(|r| keep.contains(r.pair_id.as_str())))?;
        }
    }
    emit(None, &to_json(&outcome.summary(&resolved))?)
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Vec<f64>,
}

fn load_points(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let rows: Vec<EmbeddingLine> = read_jsonl(path)?;
        Ok(rows.into_iter().map(|r| (r.id, r.embedding)).unzip())
    } else {
        let table = EmbeddingTable::load(path)?;
        let ids = table.rows().iter().map(|r| r.id.clone()).collect();
        Ok((ids, table.text_matrix()))
    }
}

fn cluster(cfg: &RunConfig, c: &Common, a: &ClusterArgs) -> CliResult {
    let (ids, points) = load_points(&a.embeddings)?;
    let mut cc = cfg.cluster.clone();
    if let Some(k) = a.k {
        cc.k = k;
    }
    if let Some(n) = a.max_iters {
        cc.max_iters = n;
    }
    if let Some(s) = c.seed {
        cc.seed = s;
    }
    let clustering = kmeans(&points, &cc, cfg.exec)?;
    emit(cfg.out.as_deref(), &to_json(&ClusterReport::new(&clustering, &ids))?)
}

fn jobs(cfg: &RunConfig, c: &Common, a: &JobsArgs) -> CliResult {
    let pairs = require(&cfg.pairs, "--pairs")?;
    let out = require(&cfg.out, "--out")?;
    let selected: Option<HashSet<String>> = match &a.select {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            let rep: ClusterReport = serde_json::from_str(&text).map_err(Error::from)?;
            Some(rep.representatives.into_iter().collect())
        }
        None => None,
    };
    let defaults = JobOptions::default();
    let opts = JobOptions {
        metrics: if c.metrics.is_some() {
            cfg.metrics.clone()
        } else {
            defaults.metrics
        },
        path: if a.text_only {
            TeacherPath::TextOnly
        } else {
            TeacherPath::Vision
        },
        mode: mode_of(a.mode, cfg.scorer.mode),
        max_new_tokens: a.max_new_tokens.unwrap_or(defaults.max_new_tokens),
    };
    let stream = open_pair_stream(&cfg.ingest.source(pairs)?)?.filter(|p| match (p, &selected) {
        (Ok(pair), Some(sel)) => sel.contains(&pair.id),
        _ => true,
    });
    let mut w = JsonlWriter::create(out)?;
    let mut n = 0usize;
    let mut pending = 0usize;
    for job in emit_teacher_jobs(stream, &opts) {
        let job = job?;
        pending += usize::from(job.pending);
        w.write(&job)?;
        n += 1;
    }
    w.flush()?;
    emit(None, &to_json(&serde_json::json!({ "jobs": n, "pending": pending }))?)
}

fn sample(cfg: &RunConfig, c: &Common, a: &SampleArgs) -> CliResult {
    let out = require(&cfg.out, "--out")?;
    let records: Vec<InstructionRecord> = read_jsonl(&a.input)?;
    let mut sc = cfg.sampler.clone();
    if let Some(t) = a.target {
        sc.target_size = t;
    }
    if let Some(t) = a.downsample_threshold {
        sc.downsample_threshold = t;
    }
    if let Some(b) = a.buckets {
        sc.bucket_count = b;
    }
    let wanted: Option<&[Metric]> = c.metrics.as_ref().map(|_| cfg.metrics.as_slice());
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        if wanted.is_some_and(|w| !r.metric.is_some_and(|m| w.contains(&m))) {
            continue;
        }
        let s = r
            .score
            .ok_or_else(|| Error::InvalidSpec(format!("instruction from `{}` has no score", r.source)))?;
        items.push((r, s));
    }
    let outcome = balanced_sample(&items, &sc)?;
    write_jsonl(out, &outcome.selected)?;
    let body = serde_json::json!({
        "selected": outcome.selected.len(),
        "bucket_sizes": outcome.bucket_sizes,
        "per_bucket": outcome.per_bucket,
        "per_large_bucket": outcome.per_large_bucket,
        "shortfall": outcome.shortfall,
    });
    emit(None, &to_json(&body)?)
}

fn mixture(cfg: &RunConfig, a: &MixtureArgs) -> CliResult {
    let out = require(&cfg.out, "--out")?;
    let spec: MixtureSpec = match &a.mixture {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        }
        None => MixtureSpec::default(),
    };
    let mut pools = BTreeMap::new();
    for s in &spec.sources {
        let path = a.pools.join(format!("{}.jsonl", s.pool));
        let records: Vec<InstructionRecord> = if path.exists() { read_jsonl(&path)? } else { Vec::new() };
        pools.insert(s.pool.clone(), records);
    }
    let mixed = assemble_mixture(&spec, &pools, cfg.seed)?;
    write_jsonl(out, &mixed)?;
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &mixed {
        *per_source.entry(r.source.as_str()).or_default() += 1;
    }
    emit(
        None,
        &to_json(&serde_json::json!({ "total": mixed.len(), "per_source": per_source }))?,
    )
}

fn correlation_block(sample: &PairedSample, permutations: Option<usize>, seed: u64) -> CliResult<serde_json::Value> {
    let mut body = serde_json::json!({
        "pearson": pearson(sample)?,
        "spearman": spearman(sample)?,
    });
    if let Some(n) = permutations {
        body["permutation"] = serde_json::json!({
            "permutations": n,
            "seed": seed,
            "pearson": permutation_test(sample, CorrelationKind::Pearson, n, seed)?,
            "spearman": permutation_test(sample, CorrelationKind::Spearman, n, seed)?,
        });
    }
    Ok(body)
}

fn correlate(cfg: &RunConfig, a: &CorrelateArgs) -> CliResult {
    let human = load_human_scores(&a.human)?;
    let mut out = serde_json::Map::new();
    match &a.embeddings {
        Some(table) => {
            let sims: HashMap<String, f64> = EmbeddingTable::load(table)?
                .scaled_similarities(cfg.exec)?
                .into_iter()
                .collect();
            let sample = PairedSample::join(&human, &sims)?;
            out.insert("cosine".into(), correlation_block(&sample, a.permutations, cfg.seed)?);
        }
        None => {
            let records = load_scores(cfg)?;
            for &m in &cfg.metrics {
                let sample = PairedSample::join_records(&human, &records, m)?;
                out.insert(m.to_string(), correlation_block(&sample, a.permutations, cfg.seed)?);
            }
        }
    }
    emit(cfg.out.as_deref(), &to_json(&out)?)
}

fn report(cfg: &RunConfig, c: &Common, a: &ReportArgs) -> CliResult {
    let records = load_scores(cfg)?;
    let metrics: Vec<Metric> = if c.metrics.is_some() || c.config.is_some() {
        cfg.metrics.clone()
    } else {
        let present: BTreeSet<Metric> = records.iter().flat_map(|r| r.scores.keys().copied()).collect();
        present.into_iter().collect()
    };
    let rep = distribution_report(&records, &metrics);
    if let Some(p) = &a.csv {
        emit(Some(p), &rep.to_csv())?;
    }
    emit(cfg.out.as_deref(), &to_json(&rep)?)
}

#[derive(Serialize)]
struct SweepLine {
    metric: Metric,
    fraction: f64,
    threshold: u8,
    retained: u64,
}

fn sweep(cfg: &RunConfig, a: &SweepArgs) -> CliResult {
    let fractions: Vec<f64> = match &a.fractions {
        Some(list) => list
            .split(',')
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad fraction `{f}` in --fractions")))
            })
            .collect::<CliResult<_>>()?,
        None => DEFAULT_FRACTIONS.to_vec(),
    };
    let records = load_scores(cfg)?;
    let hists = histograms_for(&records, &cfg.metrics, cfg.exec)?;
    let mut rows = Vec::new();
    for (m, h) in &hists {
        for r in fraction_sweep(h, &fractions)? {
            rows.push(SweepLine {
                metric: *m,
                fraction: r.fraction,
                threshold: r.threshold,
                retained: r.retained,
            });
        }
    }
    emit(cfg.out.as_deref(), &to_json(&rows)?)
}
