//! Bucket-balanced sampling of scored items.
//!
//! Scores are grouped into equal-width buckets over 0..=100 (score 100 joins
//! the top bucket). Buckets smaller than the downsample threshold are kept
//! whole; every other bucket contributes an equal share of the remaining
//! budget, drawn uniformly without replacement and clamped to the bucket's
//! size. The concatenation, in bucket order, is cut at the target size.
//!
//! Two edge cases are worth knowing about. A bucket whose size equals the
//! threshold is downsampled. When the small buckets alone exceed the target,
//! large buckets contribute nothing and the cut drops items from the
//! highest-scoring small buckets.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::QualityScore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub bucket_count: usize,
    pub target_size: usize,
    pub downsample_threshold: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            bucket_count: 10,
            target_size: 1000,
            downsample_threshold: 130,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bucket_count == 0 || 100 % self.bucket_count != 0 {
            return Err(Error::InvalidConfig(format!(
                "bucket_count {} must divide 100",
                self.bucket_count
            )));
        }
        if self.target_size == 0 || self.downsample_threshold == 0 {
            return Err(Error::InvalidConfig(
                "target_size and downsample_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn bucket_of(&self, score: QualityScore) -> usize {
        bucket_index(score, self.bucket_count)
    }
}

/// Bucket of `score` among `bucket_count` equal-width buckets; 100 shares
/// the last bucket.
pub fn bucket_index(score: QualityScore, bucket_count: usize) -> usize {
    let width = 100 / bucket_count;
    (score.value() as usize / width).min(bucket_count - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome<T> {
    pub selected: Vec<T>,
    /// Input size of each bucket.
    pub bucket_sizes: Vec<usize>,
    /// Items each bucket contributed to `selected`.
    pub per_bucket: Vec<usize>,
    /// Per-bucket draw for downsampled buckets.
    pub per_large_bucket: usize,
    /// How far `selected` falls short of the target.
    pub shortfall: usize,
}

pub fn balanced_sample<T: Clone>(items: &[(T, QualityScore)], cfg: &SamplerConfig) -> Result<SampleOutcome<T>> {
    cfg.validate()?;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cfg.bucket_count];
    for (i, (_, score)) in items.iter().enumerate() {
        buckets[cfg.bucket_of(*score)].push(i);
    }
    let is_large = |b: &Vec<usize>| b.len() >= cfg.downsample_threshold;
    let kept: usize = buckets.iter().filter(|b| !is_large(b)).map(Vec::len).sum();
    let large = buckets.iter().filter(|b| is_large(b)).count();
    let per_large_bucket = cfg.target_size.saturating_sub(kept).checked_div(large).unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (b, members) in buckets.iter().enumerate() {
        if is_large(members) {
            let take = per_large_bucket.min(members.len());
            for j in index::sample(&mut rng, members.len(), take) {
                order.push((b, members[j]));
            }
        } else {
            order.extend(members.iter().map(|&i| (b, i)));
        }
    }
    order.truncate(cfg.target_size);

    let mut per_bucket = vec![0usize; cfg.bucket_count];
    for &(b, _) in &order {
        per_bucket[b] += 1;
    }
    Ok(SampleOutcome {
        selected: order.iter().map(|&(_, i)| items[i].0.clone()).collect(),
        bucket_sizes: buckets.iter().map(Vec::len).collect(),
        per_bucket,
        per_large_bucket,
        shortfall: cfg.target_size.saturating_sub(order.len()),
    })
}
