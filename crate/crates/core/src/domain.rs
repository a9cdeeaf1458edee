//! Shared domain types: metrics, pairs, bounded scores and score records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One of the four quality metrics a pair can be scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    /// Image-text matching.
    Itm,
    /// Object detail fulfillment.
    Odf,
    /// Caption text quality.
    Ctq,
    /// Semantic understanding.
    Su,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Itm, Metric::Odf, Metric::Ctq, Metric::Su];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Itm => "itm",
            Metric::Odf => "odf",
            Metric::Ctq => "ctq",
            Metric::Su => "su",
        }
    }

    /// Human-readable name of the metric.
    pub fn title(self) -> &'static str {
        match self {
            Metric::Itm => "Image Text Matching",
            Metric::Odf => "Object Detail Fulfillment",
            Metric::Ctq => "Caption Text Quality",
            Metric::Su => "Semantic Understanding",
        }
    }
}

/// Parses a metric name, ignoring ASCII case.
pub fn parse_metric(name: &str) -> Result<Metric> {
    Metric::ALL
        .into_iter()
        .find(|m| m.as_str().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownMetric(name.to_owned()))
}

/// Parses a comma-separated metric list such as `itm,odf`.
pub fn parse_metric_list(list: &str) -> Result<Vec<Metric>> {
    let metrics = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_metric)
        .collect::<Result<Vec<_>>>()?;
    if metrics.is_empty() {
        return Err(Error::UnknownMetric(list.to_owned()));
    }
    Ok(metrics)
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_metric(s)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_metric(&s).map_err(serde::de::Error::custom)
    }
}

/// Integer quality score on the closed 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct QualityScore(u8);

impl QualityScore {
    pub const MAX: u8 = 100;

    pub fn new(value: i64) -> Result<Self> {
        if (0..=Self::MAX as i64).contains(&value) {
            Ok(QualityScore(value as u8))
        } else {
            Err(Error::InvalidScore(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for QualityScore {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        QualityScore::new(value)
    }
}

impl From<QualityScore> for u8 {
    fn from(s: QualityScore) -> u8 {
        s.0
    }
}

impl fmt::Display for QualityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Where a pair's image lives. Opaque to the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ImageRef {
    #[default]
    None,
    Path(String),
    Url(String),
    B64(String),
}

impl ImageRef {
    /// Classifies a raw column value: empty is `None`, `http(s)://` is a URL,
    /// `data:` URIs are base64 payloads, anything else is a local path.
    pub fn guess(raw: &str) -> Self {
        let raw = raw.trim();
        if raw.is_empty() {
            ImageRef::None
        } else if raw.starts_with("http://") || raw.starts_with("https://") {
            ImageRef::Url(raw.to_owned())
        } else if let Some(rest) = raw.strip_prefix("data:") {
            let payload = rest.split_once(',').map_or(rest, |(_, p)| p);
            ImageRef::B64(payload.to_owned())
        } else {
            ImageRef::Path(raw.to_owned())
        }
    }
}

/// One record of a web-crawled pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTextPair {
    pub id: String,
    #[serde(rename = "image", default)]
    pub image_ref: ImageRef,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_caption: Option<String>,
}

impl ImageTextPair {
    pub fn new(id: impl Into<String>, caption: impl Into<String>) -> Self {
        ImageTextPair {
            id: id.into(),
            image_ref: ImageRef::None,
            caption: caption.into(),
            dense_caption: None,
        }
    }

    pub fn with_dense_caption(mut self, dense: impl Into<String>) -> Self {
        self.dense_caption = Some(dense.into());
        self
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.image_ref = image;
        self
    }
}

/// Caption policy applied when pairs are ingested.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPolicy {
    #[serde(default)]
    pub allow_empty_caption: bool,
}

pub fn validate_pair(pair: ImageTextPair, policy: &PairPolicy) -> Result<ImageTextPair> {
    if pair.id.is_empty() {
        return Err(Error::EmptyId);
    }
    if pair.caption.is_empty() && !policy.allow_empty_caption {
        return Err(Error::EmptyCaption(pair.id));
    }
    Ok(pair)
}

/// Per-pair scores, one optional slot per metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    #[serde(rename = "id")]
    pub pair_id: String,
    pub scores: BTreeMap<Metric, QualityScore>,
    pub provenance: String,
}

impl ScoreRecord {
    pub fn new(pair_id: impl Into<String>, provenance: impl Into<String>) -> Self {
        ScoreRecord {
            pair_id: pair_id.into(),
            scores: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn with(mut self, metric: Metric, score: QualityScore) -> Self {
        self.scores.insert(metric, score);
        self
    }

    pub fn get(&self, metric: Metric) -> Option<QualityScore> {
        self.scores.get(&metric).copied()
    }

    pub fn require(&self, metric: Metric) -> Result<QualityScore> {
        self.get(metric).ok_or_else(|| Error::MissingScore {
            pair_id: self.pair_id.clone(),
            metric,
        })
    }
}
