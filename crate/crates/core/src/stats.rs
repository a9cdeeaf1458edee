//! Agreement with human labels, score distributions and fraction sweeps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::curation::bucket_index;
use crate::domain::{Metric, QualityScore, ScoreRecord};
use crate::error::{Error, Result};
use crate::filter::{build_histogram, compute_threshold, Histogram101};

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.2, 0.25, 0.3, 0.35, 0.4];
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Human and model scores for the same pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    ids: Vec<String>,
    human: Vec<f64>,
    model: Vec<f64>,
}

impl PairedSample {
    /// Rows are `(id, human, model)`. Requires at least 3 rows, unique ids
    /// and finite values.
    pub fn new(rows: Vec<(String, f64, f64)>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(Error::TooFewSamples(rows.len()));
        }
        let mut seen = HashSet::with_capacity(rows.len());
        let mut s = PairedSample {
            ids: Vec::with_capacity(rows.len()),
            human: Vec::with_capacity(rows.len()),
            model: Vec::with_capacity(rows.len()),
        };
        for (id, h, m) in rows {
            if !h.is_finite() || !m.is_finite() {
                return Err(Error::NonFiniteValue(id));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            s.ids.push(id);
            s.human.push(h);
            s.model.push(m);
        }
        Ok(s)
    }

    /// Unlabelled sample; ids are row indices.
    pub fn from_vectors(human: &[f64], model: &[f64]) -> Result<Self> {
        if human.len() != model.len() {
            return Err(Error::DimensionMismatch(human.len(), model.len()));
        }
        Self::new(
            human
                .iter()
                .zip(model)
                .enumerate()
                .map(|(i, (&h, &m))| (i.to_string(), h, m))
                .collect(),
        )
    }

    /// Joins human labels against model scores by id, in label order.
    pub fn join(human: &[(String, f64)], model: &HashMap<String, f64>) -> Result<Self> {
        let rows = human
            .iter()
            .map(|(id, h)| match model.get(id) {
                Some(&m) => Ok((id.clone(), *h, m)),
                None => Err(Error::InvalidSpec(format!("no model score for labelled pair `{id}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Joins human labels against one metric of the score records.
    pub fn join_records(human: &[(String, f64)], records: &[ScoreRecord], metric: Metric) -> Result<Self> {
        let by_id: HashMap<&str, &ScoreRecord> = records.iter().map(|r| (r.pair_id.as_str(), r)).collect();
        let rows = human
            .iter()
            .map(|(id, h)| {
                let rec = by_id.get(id.as_str()).ok_or_else(|| Error::MissingScore {
                    pair_id: id.clone(),
                    metric,
                })?;
                Ok((id.clone(), *h, f64::from(rec.require(metric)?.value())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn human(&self) -> &[f64] {
        &self.human
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn correlation_coefficient(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of `r` under the t approximation with n−2 degrees of
/// freedom.
fn t_test_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

pub fn pearson(s: &PairedSample) -> Result<CorrelationResult> {
    let r = correlation_coefficient(&s.human, &s.model)?;
    Ok(CorrelationResult {
        coefficient: r,
        p_value: t_test_p_value(r, s.len()),
        n: s.len(),
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j.
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn spearman(s: &PairedSample) -> Result<CorrelationResult> {
    let r = correlation_coefficient(&average_ranks(&s.human), &average_ranks(&s.model))?;
    Ok(CorrelationResult {
        coefficient: r,
        p_value: t_test_p_value(r, s.len()),
        n: s.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

impl CorrelationKind {
    pub fn compute(self, s: &PairedSample) -> Result<CorrelationResult> {
        match self {
            CorrelationKind::Pearson => pearson(s),
            CorrelationKind::Spearman => spearman(s),
        }
    }
}

/// Exact-style significance for small samples: the share of seeded
/// permutations of the model scores whose |coefficient| reaches the
/// observed one, with the +1 correction so p is never 0.
pub fn permutation_test(
    s: &PairedSample,
    kind: CorrelationKind,
    permutations: usize,
    seed: u64,
) -> Result<CorrelationResult> {
    let (x, y) = match kind {
        CorrelationKind::Pearson => (s.human.clone(), s.model.clone()),
        CorrelationKind::Spearman => (average_ranks(&s.human), average_ranks(&s.model)),
    };
    let observed = correlation_coefficient(&x, &y)?;
    // Guards against permutations that reproduce the observed value but
    // differ in the last ulp.
    let bar = observed.abs() - 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y;
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if correlation_coefficient(&x, &shuffled)?.abs() >= bar {
            hits += 1;
        }
    }
    Ok(CorrelationResult {
        coefficient: observed,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        n: s.len(),
    })
}

/// Reads a `id,human` CSV (header required; extra columns ignored).
pub fn load_human_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_human_scores(file, &path.display().to_string())
}

pub fn read_human_scores<R: std::io::Read>(reader: R, name: &str) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let malformed = |row: usize, reason: String| Error::MalformedRow {
        shard: name.to_owned(),
        row,
        reason,
    };
    let headers = rdr.headers().map_err(|e| malformed(0, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(0, format!("missing `{name}` column")))
    };
    let (id_col, human_col) = (col("id")?, col("human")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        let id = rec.get(id_col).unwrap_or_default();
        if id.is_empty() {
            return Err(malformed(row, "empty id".into()));
        }
        let raw = rec.get(human_col).unwrap_or_default();
        let h: f64 = raw
            .parse()
            .map_err(|_| malformed(row, format!("human score {raw:?} is not a number")))?;
        out.push((id.to_owned(), h));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub threshold: u8,
    pub retained: u64,
}

pub fn fraction_sweep(h: &Histogram101, fractions: &[f64]) -> Result<Vec<SweepRow>> {
    fractions
        .iter()
        .map(|&fraction| {
            let threshold = compute_threshold(h, fraction)?;
            Ok(SweepRow {
                fraction,
                threshold,
                retained: h.retained_at(threshold),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub total: u64,
    /// Counts for scores 0..=100.
    pub counts: Vec<u64>,
    /// Ten-wide buckets; 100 is folded into the last.
    pub buckets: Vec<u64>,
    pub mean: f64,
    pub median: f64,
    /// `retained[t]` is the share of scores ≥ t, for t in 0..=100.
    pub retained: Vec<f64>,
}

impl MetricDistribution {
    pub fn from_histogram(h: &Histogram101) -> Self {
        let total = h.total();
        let mut buckets = vec![0u64; 10];
        for s in 0..=100u8 {
            let q = QualityScore::new(i64::from(s)).expect("in range");
            buckets[bucket_index(q, 10)] += h.count(s);
        }
        let (mean, median) = if total == 0 {
            (0.0, 0.0)
        } else {
            let sum: u64 = (0..=100u8).map(|s| u64::from(s) * h.count(s)).sum();
            let lo = nth_score(h, (total - 1) / 2);
            let hi = nth_score(h, total / 2);
            (sum as f64 / total as f64, (f64::from(lo) + f64::from(hi)) / 2.0)
        };
        MetricDistribution {
            total,
            counts: h.counts().to_vec(),
            buckets,
            mean,
            median,
            retained: (0..=100u8).map(|t| h.retain_fraction(t)).collect(),
        }
    }
}

/// The `k`-th smallest score (0-based). `k < total`.
fn nth_score(h: &Histogram101, k: u64) -> u8 {
    let mut seen = 0;
    for s in 0..=100u8 {
        seen += h.count(s);
        if seen > k {
            return s;
        }
    }
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub metrics: BTreeMap<Metric, MetricDistribution>,
}

/// Distribution of each requested metric over the records that carry it.
pub fn distribution_report(records: &[ScoreRecord], metrics: &[Metric]) -> DistributionReport {
    let metrics = metrics
        .iter()
        .map(|&m| {
            let h = build_histogram(records.iter().filter_map(|r| r.get(m)));
            (m, MetricDistribution::from_histogram(&h))
        })
        .collect();
    DistributionReport { metrics }
}

impl DistributionReport {
    /// Long-format CSV: `metric,score,count,retained_fraction`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,score,count,retained_fraction\n");
        for (m, d) in &self.metrics {
            for s in 0..=100usize {
                out.push_str(&format!("{m},{s},{},{}\n", d.counts[s], d.retained[s]));
            }
        }
        out
    }
}
