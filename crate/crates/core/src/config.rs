//! Run configuration, canonical config digests and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::{ClusterConfig, SamplerConfig};
use crate::domain::{Metric, PairPolicy};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filter::Combiner;
use crate::ingest::{expand_shards, FieldMapping, MalformedPolicy, PairSource, SourceFormat};
use crate::scorer::{FailurePolicy, PromptMode, RetryPolicy};

/// Serializes a JSON value with object keys sorted and no whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

// Explicit sort: map ordering must not depend on serde_json's
// `preserve_order` feature being unified in by some other crate.
fn write_canonical(value: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Lowercase hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let digest = Sha256::digest(canonical_json(&value).as_bytes());
    Ok(hex::encode(digest))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: PathBuf,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub shards: Vec<ShardEntry>,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_log: Option<PathBuf>,
}

impl RunManifest {
    pub fn total(&self) -> u64 {
        self.shards.iter().map(|s| s.count).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// Inferred from the first shard's extension when unset.
    pub format: Option<SourceFormat>,
    pub malformed: MalformedPolicy,
    pub allow_empty_caption: bool,
    pub id_field: String,
    pub image_field: String,
    pub caption_field: String,
    pub dense_caption_field: String,
    pub shard_size: usize,
}

impl IngestSection {
    pub fn policy(&self) -> PairPolicy {
        PairPolicy {
            allow_empty_caption: self.allow_empty_caption,
        }
    }

    pub fn mapping(&self) -> FieldMapping {
        FieldMapping {
            id: self.id_field.clone(),
            image: self.image_field.clone(),
            caption: self.caption_field.clone(),
            dense_caption: self.dense_caption_field.clone(),
        }
    }

    /// Pair source over a shard file or directory of shards.
    pub fn source(&self, path: &Path) -> Result<PairSource> {
        let shards = expand_shards(path)?;
        let format = self
            .format
            .or_else(|| shards.first().map(|s| SourceFormat::from_path(s)))
            .unwrap_or_default();
        Ok(PairSource {
            format,
            shards,
            mapping: self.mapping(),
            malformed: self.malformed,
            policy: self.policy(),
        })
    }
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            format: None,
            malformed: MalformedPolicy::Fail,
            allow_empty_caption: false,
            id_field: "id".into(),
            image_field: "image".into(),
            caption_field: "caption".into(),
            dense_caption_field: "dense_caption".into(),
            shard_size: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub mode: PromptMode,
    pub max_new_tokens: u32,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    pub on_failure: FailurePolicy,
    /// Records between flushes of the score file and progress log.
    pub checkpoint_every: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            mode: PromptMode::Rationalization,
            max_new_tokens: 4,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
            on_failure: FailurePolicy::Abort,
            checkpoint_every: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub fraction: f64,
    pub combiner: Option<Combiner>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            fraction: 0.3,
            combiner: None,
        }
    }
}

/// Everything a CLI run can be configured with. Unknown keys are rejected at
/// every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pairs: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Vec<Metric>,
    pub endpoint: Option<String>,
    pub concurrency: usize,
    pub seed: u64,
    pub exec: Exec,
    pub ingest: IngestSection,
    pub scorer: ScorerSection,
    pub filter: FilterSection,
    pub cluster: ClusterConfig,
    pub sampler: SamplerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pairs: None,
            scores: None,
            out: None,
            metrics: vec![Metric::Itm],
            endpoint: None,
            concurrency: 8,
            seed: 0,
            exec: Exec::default(),
            ingest: IngestSection::default(),
            scorer: ScorerSection::default(),
            filter: FilterSection::default(),
            cluster: ClusterConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::InvalidConfig("concurrency must be at least 1".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("metrics must not be empty".into()));
        }
        if !(self.filter.fraction > 0.0 && self.filter.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fraction {} is outside (0, 1]",
                self.filter.fraction
            )));
        }
        if self.scorer.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        if self.scorer.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        if self.ingest.shard_size == 0 {
            return Err(Error::InvalidConfig("shard_size must be at least 1".into()));
        }
        self.scorer.retry.validate()?;
        self.cluster.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    pub fn digest(&self) -> Result<String> {
        config_digest(self)
    }
}
