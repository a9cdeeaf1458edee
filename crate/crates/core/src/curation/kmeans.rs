//! k-means with k-means++ seeding, and selection of one representative point
//! per cluster (the member nearest its centroid).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Exec, DEFAULT_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KMeansAlgorithm {
    /// Full-pass Lloyd iterations.
    Lloyd,
    /// Sculley-style mini-batch updates, for pools far beyond a million
    /// points. Objective monotonicity is not guaranteed.
    MiniBatch { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative objective change drops to this value.
    pub epsilon: f64,
    pub algorithm: KMeansAlgorithm,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 10_000,
            seed: 0,
            max_iters: 100,
            epsilon: 1e-6,
            algorithm: KMeansAlgorithm::Lloyd,
        }
    }
}

impl ClusterConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        ClusterConfig {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be nonnegative".into()));
        }
        if let KMeansAlgorithm::MiniBatch { batch_size: 0 } = self.algorithm {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every point.
    pub assignments: Vec<usize>,
    /// Objective (sum of squared distances to assigned centroids) after each
    /// assignment step.
    pub objective_history: Vec<f64>,
    /// Index of the point chosen to represent each cluster, in cluster order.
    pub representatives: Vec<usize>,
}

impl Clustering {
    pub fn iterations(&self) -> usize {
        self.objective_history.len()
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (ties to the lowest index) and its squared distance.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn validate_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if points.len() < k {
        return Err(Error::TooFewPoints {
            have: points.len(),
            need: k,
        });
    }
    let dim = points.first().map_or(0, Vec::len);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch(dim, p.len()));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding(i));
        }
    }
    Ok(dim)
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// centroid, the lowest unchosen index is taken.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, exec: Exec) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut is_chosen = vec![false; n];
    is_chosen[chosen[0]] = true;
    let mut d2: Vec<f64> = exec.map(points, |p| squared_distance(p, &points[chosen[0]]));
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            is_chosen.iter().position(|c| !c).expect("n >= k")
        };
        is_chosen[next] = true;
        chosen.push(next);
        let c = &points[next];
        let updated = exec.map(points, |p| squared_distance(p, c));
        for (d, u) in d2.iter_mut().zip(updated) {
            *d = d.min(u);
        }
        d2[next] = 0.0;
    }
    chosen
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], exec: Exec) -> (Vec<usize>, Vec<f64>) {
    exec.map(points, |p| nearest(p, centroids)).into_iter().unzip()
}

fn total(values: &[f64], exec: Exec) -> f64 {
    exec.fold_chunks(values, DEFAULT_CHUNK, || 0.0, |a, _, x| a + x, |a, b| a + b)
}

/// Means of assigned points. Empty clusters get `None`.
fn cluster_means(
    points: &[Vec<f64>],
    assignments: &[usize],
    k: usize,
    dim: usize,
    exec: Exec,
) -> Vec<Option<Vec<f64>>> {
    let (sums, counts) = exec.fold_chunks(
        points,
        DEFAULT_CHUNK,
        || (vec![0.0f64; k * dim], vec![0usize; k]),
        |(mut sums, mut counts), i, p| {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
            (sums, counts)
        },
        |(mut sa, mut ca), (sb, cb)| {
            for (a, b) in sa.iter_mut().zip(sb) {
                *a += b;
            }
            for (a, b) in ca.iter_mut().zip(cb) {
                *a += b;
            }
            (sa, ca)
        },
    );
    (0..k)
        .map(|c| {
            (counts[c] > 0).then(|| {
                sums[c * dim..(c + 1) * dim]
                    .iter()
                    .map(|s| s / counts[c] as f64)
                    .collect()
            })
        })
        .collect()
}

/// Moves every empty cluster's centroid onto the point farthest from its
/// current centroid (ties to the lowest index), one distinct point per
/// empty cluster.
fn reseed_empty(points: &[Vec<f64>], means: Vec<Option<Vec<f64>>>, dists: &[f64]) -> Vec<Vec<f64>> {
    let mut taken = vec![false; points.len()];
    means
        .into_iter()
        .map(|mean| {
            mean.unwrap_or_else(|| {
                let mut far = None;
                for (i, &d) in dists.iter().enumerate() {
                    if !taken[i] && far.is_none_or(|(_, fd)| d > fd) {
                        far = Some((i, d));
                    }
                }
                let (i, _) = far.expect("fewer empty clusters than points");
                taken[i] = true;
                points[i].clone()
            })
        })
        .collect()
}

/// One representative per cluster: the member nearest its centroid, ties to
/// the lowest index. A cluster without members (possible only with
/// duplicate points) takes the nearest point not already chosen.
fn pick_representatives(
    points: &[Vec<f64>],
    centroids: &[Vec<f64>],
    assignments: &[usize],
    dists: &[f64],
) -> Vec<usize> {
    let k = centroids.len();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, (&c, &d)) in assignments.iter().zip(dists).enumerate() {
        if best[c].is_none_or(|(_, bd)| d < bd) {
            best[c] = Some((i, d));
        }
    }
    let mut used = vec![false; points.len()];
    for (i, _) in best.iter().flatten() {
        used[*i] = true;
    }
    best.into_iter()
        .enumerate()
        .map(|(c, b)| match b {
            Some((i, _)) => i,
            None => {
                let mut pick: Option<(usize, f64)> = None;
                for (i, p) in points.iter().enumerate() {
                    if used[i] {
                        continue;
                    }
                    let d = squared_distance(p, &centroids[c]);
                    if pick.is_none_or(|(_, pd)| d < pd) {
                        pick = Some((i, d));
                    }
                }
                let (i, _) = pick.expect("n >= k");
                used[i] = true;
                i
            }
        })
        .collect()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &ClusterConfig, dim: usize, exec: Exec) -> Clustering {
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    loop {
        let (assignments, dists) = assign(points, &centroids, exec);
        let objective = total(&dists, exec);
        let converged = match (history.last(), &previous) {
            _ if objective == 0.0 => true,
            (Some(&prev), Some(prev_assign)) => prev_assign == &assignments || (prev - objective) <= cfg.epsilon * prev,
            _ => false,
        };
        history.push(objective);
        if converged || history.len() >= cfg.max_iters {
            let representatives = pick_representatives(points, &centroids, &assignments, &dists);
            return Clustering {
                centroids,
                assignments,
                objective_history: history,
                representatives,
            };
        }
        let means = cluster_means(points, &assignments, centroids.len(), dim, exec);
        centroids = reseed_empty(points, means, &dists);
        previous = Some(assignments);
    }
}

fn mini_batch(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    cfg: &ClusterConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Clustering {
    let n = points.len();
    let mut seen = vec![0u64; centroids.len()];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iters {
        let batch: Vec<usize> = (0..batch_size.min(n)).map(|_| rng.random_range(0..n)).collect();
        let nearest_of: Vec<usize> = exec.map(&batch, |&i| nearest(&points[i], &centroids).0);
        for (&i, &c) in batch.iter().zip(&nearest_of) {
            seen[c] += 1;
            let eta = 1.0 / seen[c] as f64;
            for (x, p) in centroids[c].iter_mut().zip(&points[i]) {
                *x += eta * (p - *x);
            }
        }
        let (_, dists) = assign(points, &centroids, exec);
        let objective = total(&dists, exec);
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (prev - objective).abs() <= cfg.epsilon * prev);
        history.push(objective);
        if done || objective == 0.0 {
            break;
        }
    }
    let (assignments, dists) = assign(points, &centroids, exec);
    let representatives = pick_representatives(points, &centroids, &assignments, &dists);
    Clustering {
        centroids,
        assignments,
        objective_history: history,
        representatives,
    }
}

/// Clusters `points` into `cfg.k` groups.
pub fn kmeans(points: &[Vec<f64>], cfg: &ClusterConfig, exec: Exec) -> Result<Clustering> {
    cfg.validate()?;
    let dim = validate_points(points, cfg.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = seed_centroids(points, cfg.k, &mut rng, exec);
    let centroids: Vec<Vec<f64>> = seeds.iter().map(|&i| points[i].clone()).collect();
    Ok(match cfg.algorithm {
        KMeansAlgorithm::Lloyd => lloyd(points, centroids, cfg, dim, exec),
        KMeansAlgorithm::MiniBatch { batch_size } => mini_batch(points, centroids, cfg, batch_size, &mut rng, exec),
    })
}

/// Row indices of one representative point per cluster (length `k`,
/// distinct).
pub fn cluster_representatives(points: &[Vec<f64>], cfg: &ClusterConfig, exec: Exec) -> Result<Vec<usize>> {
    Ok(kmeans(points, cfg, exec)?.representatives)
}
