//! Score histograms, fraction-based integer thresholds, and single or
//! combined metric filters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Metric, QualityScore, ScoreRecord};
use crate::error::{Error, Result};
use crate::exec::{Exec, DEFAULT_CHUNK};

pub const BINS: usize = 101;
/// Threshold that retains nothing.
pub const MAX_THRESHOLD: u8 = 101;

/// Counts of exact scores 0..=100.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRepr", into = "HistogramRepr")]
pub struct Histogram101 {
    counts: [u64; BINS],
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct HistogramRepr {
    counts: Vec<u64>,
    total: u64,
}

impl TryFrom<HistogramRepr> for Histogram101 {
    type Error = String;

    fn try_from(r: HistogramRepr) -> std::result::Result<Self, String> {
        let counts: [u64; BINS] = r
            .counts
            .try_into()
            .map_err(|v: Vec<u64>| format!("expected {BINS} counts, got {}", v.len()))?;
        let sum: u64 = counts.iter().sum();
        if sum != r.total {
            return Err(format!("counts sum to {sum} but total is {}", r.total));
        }
        Ok(Histogram101 { counts, total: sum })
    }
}

impl From<Histogram101> for HistogramRepr {
    fn from(h: Histogram101) -> Self {
        HistogramRepr {
            counts: h.counts.to_vec(),
            total: h.total,
        }
    }
}

impl Default for Histogram101 {
    fn default() -> Self {
        Histogram101 {
            counts: [0; BINS],
            total: 0,
        }
    }
}

impl Histogram101 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [u64; BINS]) -> Self {
        Histogram101 {
            total: counts.iter().sum(),
            counts,
        }
    }

    pub fn add(&mut self, score: QualityScore) {
        self.add_n(score, 1);
    }

    pub fn add_n(&mut self, score: QualityScore, n: u64) {
        self.counts[score.value() as usize] += n;
        self.total += n;
    }

    pub fn merge(mut self, other: &Histogram101) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self
    }

    pub fn counts(&self) -> &[u64; BINS] {
        &self.counts
    }

    pub fn count(&self, score: u8) -> u64 {
        self.counts[score as usize]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Number of scores ≥ `threshold` (0 for thresholds past 100).
    pub fn retained_at(&self, threshold: u8) -> u64 {
        let t = (threshold as usize).min(BINS);
        self.counts[t..].iter().sum()
    }

    /// `suffix[t]` = number of scores ≥ t, for t in 0..=101.
    pub fn suffix_counts(&self) -> [u64; BINS + 1] {
        let mut out = [0u64; BINS + 1];
        for t in (0..BINS).rev() {
            out[t] = out[t + 1] + self.counts[t];
        }
        out
    }

    /// Share of the pool kept at `threshold`; 0 for an empty histogram.
    pub fn retain_fraction(&self, threshold: u8) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.retained_at(threshold) as f64 / self.total as f64
    }
}

/// Counts a stream of scores.
pub fn build_histogram<I: IntoIterator<Item = QualityScore>>(scores: I) -> Histogram101 {
    let mut h = Histogram101::new();
    for s in scores {
        h.add(s);
    }
    h
}

/// Counts a slice of scores, in parallel partial histograms when `exec`
/// allows.
pub fn build_histogram_par(scores: &[QualityScore], exec: Exec) -> Histogram101 {
    exec.map_chunks(scores, DEFAULT_CHUNK * 16, |_, part| {
        build_histogram(part.iter().copied())
    })
    .iter()
    .fold(Histogram101::new(), Histogram101::merge)
}

/// One histogram per metric over `records`. Every record must carry every
/// metric.
pub fn histograms_for(
    records: &[ScoreRecord],
    metrics: &[Metric],
    exec: Exec,
) -> Result<BTreeMap<Metric, Histogram101>> {
    let mut out = BTreeMap::new();
    for &m in metrics {
        let scores = records.iter().map(|r| r.require(m)).collect::<Result<Vec<_>>>()?;
        out.insert(m, build_histogram_par(&scores, exec));
    }
    Ok(out)
}

/// Decomposes a positive finite `f` as `mantissa · 2^exp`.
fn decode(f: f64) -> (u64, i32) {
    let bits = f.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

/// Exactly decides `2 · fraction · total < m`.
fn twice_target_below(fraction: f64, total: u64, m: u128) -> bool {
    let (mant, exp) = decode(fraction);
    let lhs = u128::from(mant) * u128::from(total);
    let k = exp + 1;
    if k >= 0 {
        let k = k as u32;
        if k >= 128 || lhs.leading_zeros() < k {
            return false;
        }
        (lhs << k) < m
    } else {
        let s = (-k) as u32;
        if m == 0 {
            return false;
        }
        if s >= 128 || m.leading_zeros() < s {
            return true;
        }
        lhs < (m << s)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("fraction {fraction} is outside (0, 1]")))
    }
}

/// The integer threshold whose retained share `|{s ≥ t}| / total` is
/// closest to `fraction`. Equally close shares resolve to the larger one
/// (retain more).
///
/// Many thresholds select the same records; the one returned is the lowest
/// retained score, or one past the highest score when nothing is retained.
/// So 700@50, 200@80, 100@90 at 0.3 gives 80, and all-60 at 0.3 gives 61.
///
/// Distances are compared exactly (no floating-point rounding), so exact
/// ties such as 0.3 against 0.2 and 0.4 are resolved by the tie rule.
pub fn compute_threshold(h: &Histogram101, fraction: f64) -> Result<u8> {
    check_fraction(fraction)?;
    if h.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let suffix = h.suffix_counts();
    let mut best_t = 0usize;
    let mut best_s = suffix[0];
    for (t, &s) in suffix.iter().enumerate().skip(1) {
        // s is nonincreasing in t; a smaller retained count is strictly
        // closer to fraction·total iff the target lies below the midpoint.
        if s < best_s && twice_target_below(fraction, h.total, u128::from(s) + u128::from(best_s)) {
            best_t = t;
            best_s = s;
        }
    }
    if best_s > 0 {
        while best_t < BINS - 1 && h.counts[best_t] == 0 {
            best_t += 1;
        }
    }
    Ok(best_t as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combiner {
    #[serde(rename = "SINGLE", alias = "single", alias = "Single")]
    Single,
    #[serde(rename = "AND", alias = "and", alias = "And")]
    And,
    #[serde(rename = "OR", alias = "or", alias = "Or")]
    Or,
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SINGLE" => Ok(Combiner::Single),
            "AND" => Ok(Combiner::And),
            "OR" => Ok(Combiner::Or),
            _ => Err(Error::InvalidSpec(format!("unknown combiner `{s}`"))),
        }
    }
}

fn default_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub metrics: Vec<Metric>,
    /// Target retention, applied to each metric separately.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub combiner: Option<Combiner>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub thresholds: BTreeMap<Metric, u8>,
}

impl FilterSpec {
    pub fn single(metric: Metric, fraction: f64) -> Self {
        FilterSpec {
            metrics: vec![metric],
            fraction,
            combiner: Some(Combiner::Single),
            thresholds: BTreeMap::new(),
        }
    }

    pub fn pair(a: Metric, b: Metric, combiner: Combiner, fraction: f64) -> Self {
        FilterSpec {
            metrics: vec![a, b],
            fraction,
            combiner: Some(combiner),
            thresholds: BTreeMap::new(),
        }
    }

    /// The declared combiner, or the one implied by the metric count.
    pub fn combiner(&self) -> Combiner {
        self.combiner.unwrap_or(if self.metrics.len() == 1 {
            Combiner::Single
        } else {
            Combiner::And
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction(self.fraction)?;
        let want = match self.combiner() {
            Combiner::Single => 1,
            Combiner::And | Combiner::Or => 2,
        };
        if self.metrics.len() != want {
            return Err(Error::InvalidSpec(format!(
                "{:?} needs exactly {want} metric(s), got {}",
                self.combiner(),
                self.metrics.len()
            )));
        }
        if want == 2 && self.metrics[0] == self.metrics[1] {
            return Err(Error::InvalidSpec("combined metrics must differ".into()));
        }
        if let Some((m, t)) = self.thresholds.iter().find(|(_, &t)| t > MAX_THRESHOLD) {
            return Err(Error::InvalidSpec(format!("threshold {t} for {m} exceeds 101")));
        }
        Ok(())
    }

    pub fn is_resolved(&self) -> bool {
        self.metrics.iter().all(|m| self.thresholds.contains_key(m))
    }
}

/// Fills in the threshold for every metric of `spec` from its histogram.
pub fn resolve_spec(spec: &FilterSpec, hists: &BTreeMap<Metric, Histogram101>) -> Result<FilterSpec> {
    spec.validate()?;
    let mut resolved = spec.clone();
    for &m in &spec.metrics {
        let h = hists.get(&m).ok_or(Error::MissingHistogram(m))?;
        resolved.thresholds.insert(m, compute_threshold(h, spec.fraction)?);
    }
    Ok(resolved)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRetention {
    pub threshold: u8,
    /// Records passing this metric's threshold on its own.
    pub retained: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutcome {
    #[serde(skip)]
    pub retained: Vec<String>,
    pub retained_count: u64,
    pub total_count: u64,
    pub thresholds: BTreeMap<Metric, u8>,
    pub per_metric: BTreeMap<Metric, MetricRetention>,
}

impl FilterOutcome {
    /// Joint retained share of the pool.
    pub fn joint_fraction(&self) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.retained_count as f64 / self.total_count as f64
        }
    }

    pub fn summary(&self, spec: &FilterSpec) -> serde_json::Value {
        let per_metric: BTreeMap<_, _> = self
            .per_metric
            .iter()
            .map(|(m, r)| {
                let frac = if self.total_count == 0 {
                    0.0
                } else {
                    r.retained as f64 / self.total_count as f64
                };
                (
                    m.as_str(),
                    serde_json::json!({
                        "threshold": r.threshold,
                        "retained": r.retained,
                        "fraction": frac,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "combiner": spec.combiner(),
            "target_fraction": spec.fraction,
            "retained": self.retained_count,
            "total": self.total_count,
            "joint_fraction": self.joint_fraction(),
            "thresholds": self.thresholds,
            "per_metric": per_metric,
        })
    }
}

/// Decides one record against a resolved spec, returning the joint verdict
/// and each metric's individual verdict (in spec order).
fn judge(record: &ScoreRecord, spec: &FilterSpec) -> Result<(bool, [bool; 2])> {
    let mut passes = [false; 2];
    for (i, &m) in spec.metrics.iter().enumerate() {
        let score = record.require(m)?;
        passes[i] = score.value() >= spec.thresholds[&m];
    }
    let keep = match spec.combiner() {
        Combiner::Single => passes[0],
        Combiner::And => passes[0] && passes[1],
        Combiner::Or => passes[0] || passes[1],
    };
    Ok((keep, passes))
}

fn check_resolved(spec: &FilterSpec) -> Result<()> {
    spec.validate()?;
    if !spec.is_resolved() {
        return Err(Error::InvalidSpec("thresholds are not resolved".into()));
    }
    Ok(())
}

struct Tally {
    retained: Vec<String>,
    total: u64,
    per_metric: [u64; 2],
}

impl Tally {
    fn new() -> Self {
        Tally {
            retained: Vec::new(),
            total: 0,
            per_metric: [0; 2],
        }
    }

    fn add(&mut self, record: &ScoreRecord, spec: &FilterSpec) -> Result<()> {
        let (keep, passes) = judge(record, spec)?;
        self.total += 1;
        for (n, p) in self.per_metric.iter_mut().zip(passes) {
            *n += u64::from(p);
        }
        if keep {
            self.retained.push(record.pair_id.clone());
        }
        Ok(())
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.retained.extend(other.retained);
        self.total += other.total;
        self.per_metric[0] += other.per_metric[0];
        self.per_metric[1] += other.per_metric[1];
        self
    }

    fn finish(self, spec: &FilterSpec) -> FilterOutcome {
        let per_metric = spec
            .metrics
            .iter()
            .zip(self.per_metric)
            .map(|(&m, retained)| {
                (
                    m,
                    MetricRetention {
                        threshold: spec.thresholds[&m],
                        retained,
                    },
                )
            })
            .collect();
        FilterOutcome {
            retained_count: self.retained.len() as u64,
            retained: self.retained,
            total_count: self.total,
            thresholds: spec.thresholds.clone(),
            per_metric,
        }
    }
}

/// Keeps records whose scores meet the thresholds (`score ≥ t`): SINGLE
/// checks one metric, AND needs both, OR needs at least one.
pub fn apply_filter<'a, I>(records: I, spec: &FilterSpec) -> Result<FilterOutcome>
where
    I: IntoIterator<Item = &'a ScoreRecord>,
{
    check_resolved(spec)?;
    let mut tally = Tally::new();
    for r in records {
        tally.add(r, spec)?;
    }
    Ok(tally.finish(spec))
}

/// [`apply_filter`] over a slice, in parallel chunks when `exec` allows.
/// Retained ids keep input order.
pub fn apply_filter_par(records: &[ScoreRecord], spec: &FilterSpec, exec: Exec) -> Result<FilterOutcome> {
    check_resolved(spec)?;
    let tally = exec.fold_chunks(
        records,
        DEFAULT_CHUNK,
        || Ok(Tally::new()),
        |acc: Result<Tally>, _, r| {
            let mut t = acc?;
            t.add(r, spec)?;
            Ok(t)
        },
        |a, b| Ok(a?.merge(b?)),
    )?;
    Ok(tally.finish(spec))
}
