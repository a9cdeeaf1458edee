//! Multi-task instruction mixture assembly.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::jobs::InstructionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSource {
    /// Pool name; also stamped into each sampled record's `source`.
    pub pool: String,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub sources: Vec<MixtureSource>,
    pub total: usize,
}

/// Default 50k mixture: general multimodal and language-only instruction
/// pools plus 1k instructions per scoring metric.
const DEFAULT_SOURCES: [(&str, usize); 13] = [
    ("visual_conversation", 5000),
    ("complex_reasoning", 16000),
    ("detail_description", 5000),
    ("sharegpt", 10000),
    ("vqav2", 2000),
    ("gqa", 3000),
    ("okvqa", 2000),
    ("ocrvqa", 1000),
    ("textcaps", 2000),
    ("itm_scoring", 1000),
    ("odf_scoring", 1000),
    ("ctq_scoring", 1000),
    ("su_scoring", 1000),
];

impl Default for MixtureSpec {
    fn default() -> Self {
        let sources: Vec<MixtureSource> = DEFAULT_SOURCES
            .iter()
            .map(|&(pool, target)| MixtureSource {
                pool: pool.to_owned(),
                target,
            })
            .collect();
        MixtureSpec {
            total: sources.iter().map(|s| s.target).sum(),
            sources,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.sources.iter().map(|s| s.target).sum();
        if sum != self.total {
            return Err(Error::InvalidConfig(format!(
                "source targets sum to {sum}, total is {}",
                self.total
            )));
        }
        let names: HashSet<_> = self.sources.iter().map(|s| &s.pool).collect();
        if names.len() != self.sources.len() {
            return Err(Error::InvalidConfig("duplicate pool in mixture".into()));
        }
        Ok(())
    }
}

/// Draws each source's target count uniformly without replacement from its
/// pool, then shuffles the union. Deterministic for a given seed.
pub fn assemble_mixture(
    spec: &MixtureSpec,
    pools: &BTreeMap<String, Vec<InstructionRecord>>,
    seed: u64,
) -> Result<Vec<InstructionRecord>> {
    spec.validate()?;
    for s in &spec.sources {
        let have = pools.get(&s.pool).map_or(0, Vec::len);
        if have < s.target {
            return Err(Error::InsufficientPool {
                pool: s.pool.clone(),
                have,
                need: s.target,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.total);
    for s in &spec.sources {
        let pool = &pools[&s.pool];
        for i in index::sample(&mut rng, pool.len(), s.target) {
            let mut rec = pool[i].clone();
            rec.source.clone_from(&s.pool);
            out.push(rec);
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(name: &str, n: usize) -> Vec<InstructionRecord> {
        (0..n)
            .map(|i| InstructionRecord::task(format!("{name} q{i}"), format!("a{i}"), name))
            .collect()
    }

    #[test]
    fn default_spec_is_consistent() {
        let spec = MixtureSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.total, 50_000);
        assert_eq!(spec.sources.len(), 13);
    }

    #[test]
    fn small_mixture() {
        let spec = MixtureSpec {
            sources: vec![
                MixtureSource {
                    pool: "a".into(),
                    target: 3,
                },
                MixtureSource {
                    pool: "b".into(),
                    target: 2,
                },
            ],
            total: 5,
        };
        let pools: BTreeMap<_, _> = [("a".to_owned(), pool("a", 10)), ("b".to_owned(), pool("b", 2))].into();
        let out = assemble_mixture(&spec, &pools, 1).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out.iter().filter(|r| r.source == "a").count(), 3);
        assert_eq!(out, assemble_mixture(&spec, &pools, 1).unwrap());
        let unique: HashSet<_> = out.iter().map(|r| &r.prompt).collect();
        assert_eq!(unique.len(), 5);
    }

    #[test]
    fn errors() {
        let spec = MixtureSpec {
            sources: vec![MixtureSource {
                pool: "a".into(),
                target: 1000,
            }],
            total: 1000,
        };
        let pools: BTreeMap<_, _> = [("a".to_owned(), pool("a", 500))].into();
        assert!(matches!(
            assemble_mixture(&spec, &pools, 0),
            Err(Error::InsufficientPool {
                have: 500,
                need: 1000,
                ..
            })
        ));
        assert!(matches!(
            assemble_mixture(&spec, &BTreeMap::new(), 0),
            Err(Error::InsufficientPool { have: 0, .. })
        ));
        let bad_total = MixtureSpec { total: 7, ..spec };
        assert!(bad_total.validate().is_err());
    }
}
