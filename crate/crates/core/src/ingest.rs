//! Sharded pair sources, JSONL output shards, and the progress log that makes
//! long scoring runs resumable.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::config::{config_digest, RunManifest, ShardEntry};
use crate::domain::{validate_pair, ImageRef, ImageTextPair, PairPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    #[default]
    Jsonl,
    Tsv,
}

impl SourceFormat {
    /// Picks a format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => SourceFormat::Tsv,
            _ => SourceFormat::Jsonl,
        }
    }
}

/// What to do with rows that cannot be turned into a valid pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalformedPolicy {
    #[default]
    Fail,
    SkipWithCount,
}

/// Which JSON keys (or TSV header columns) hold each pair field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub id: String,
    pub image: String,
    pub caption: String,
    pub dense_caption: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            id: "id".into(),
            image: "image".into(),
            caption: "caption".into(),
            dense_caption: "dense_caption".into(),
        }
    }
}

impl FieldMapping {
    fn validate(&self) -> Result<()> {
        let names = [&self.id, &self.image, &self.caption, &self.dense_caption];
        let distinct: HashSet<_> = names.iter().collect();
        if distinct.len() != names.len() {
            return Err(Error::InvalidConfig(format!(
                "field mapping names must be distinct: {names:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PairSource {
    pub format: SourceFormat,
    pub shards: Vec<PathBuf>,
    pub mapping: FieldMapping,
    pub malformed: MalformedPolicy,
    pub policy: PairPolicy,
}

impl PairSource {
    pub fn jsonl(shards: Vec<PathBuf>) -> Self {
        PairSource {
            format: SourceFormat::Jsonl,
            shards,
            mapping: FieldMapping::default(),
            malformed: MalformedPolicy::Fail,
            policy: PairPolicy::default(),
        }
    }

    pub fn tsv(shards: Vec<PathBuf>) -> Self {
        PairSource {
            format: SourceFormat::Tsv,
            ..Self::jsonl(shards)
        }
    }

    pub fn with_malformed(mut self, policy: MalformedPolicy) -> Self {
        self.malformed = policy;
        self
    }

    pub fn with_policy(mut self, policy: PairPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_mapping(mut self, mapping: FieldMapping) -> Self {
        self.mapping = mapping;
        self
    }
}

/// Resolves a CLI path argument into shard files: a directory expands to its
/// `.jsonl`/`.tsv` files in name order, a file is used as-is.
pub fn expand_shards(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut shards = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && (ext == "jsonl" || ext == "tsv") {
            shards.push(p);
        }
    }
    shards.sort();
    Ok(shards)
}

/// Opens a single-consumer stream over all shards, in shard order then row
/// order.
pub fn open_pair_stream(src: &PairSource) -> Result<PairStream> {
    if src.shards.is_empty() {
        return Err(Error::InvalidConfig("pair source has no shards".into()));
    }
    src.mapping.validate()?;
    for shard in &src.shards {
        if !shard.is_file() {
            return Err(Error::io(
                shard,
                std::io::Error::new(std::io::ErrorKind::NotFound, "shard not found"),
            ));
        }
    }
    Ok(PairStream {
        src: src.clone(),
        shard_idx: 0,
        current: None,
        skipped: 0,
        done: false,
    })
}

struct OpenShard {
    lines: Lines<BufReader<File>>,
    row: usize,
    header: Option<Vec<String>>,
}

pub struct PairStream {
    src: PairSource,
    shard_idx: usize,
    current: Option<OpenShard>,
    skipped: usize,
    done: bool,
}

impl PairStream {
    /// Rows dropped under [`MalformedPolicy::SkipWithCount`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn shard_name(&self) -> String {
        self.src.shards[self.shard_idx].display().to_string()
    }

    fn open_current(&mut self) -> Result<()> {
        let path = &self.src.shards[self.shard_idx];
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match self.src.format {
            SourceFormat::Jsonl => None,
            SourceFormat::Tsv => {
                let line = match lines.next() {
                    Some(l) => l.map_err(|e| Error::io(path, e))?,
                    None => String::new(),
                };
                let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_owned()).collect();
                if !line.is_empty() && !cols.contains(&self.src.mapping.caption) {
                    return Err(Error::MalformedRow {
                        shard: path.display().to_string(),
                        row: 0,
                        reason: format!("header lacks caption column `{}`", self.src.mapping.caption),
                    });
                }
                Some(cols)
            }
        };
        self.current = Some(OpenShard { lines, row: 0, header });
        Ok(())
    }

    fn parse_row(&self, line: &str, row: usize, header: Option<&[String]>) -> Result<ImageTextPair> {
        let malformed = |reason: String| Error::MalformedRow {
            shard: self.shard_name(),
            row,
            reason,
        };
        let synth_id = || format!("shard{}:{}", self.shard_idx, row);
        let m = &self.src.mapping;
        let pair = match header {
            None => {
                let value: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                let obj = value
                    .as_object()
                    .ok_or_else(|| malformed("row is not a JSON object".into()))?;
                let id = match obj.get(&m.id) {
                    None | Some(serde_json::Value::Null) => synth_id(),
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    Some(other) => return Err(malformed(format!("id is not a string: {other}"))),
                };
                let caption = match obj.get(&m.caption) {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(_) => return Err(malformed("caption is not a string".into())),
                    None => return Err(malformed(format!("missing `{}`", m.caption))),
                };
                let image_ref = match obj.get(&m.image) {
                    None | Some(serde_json::Value::Null) => ImageRef::None,
                    Some(serde_json::Value::String(s)) => ImageRef::guess(s),
                    Some(v) => {
                        serde_json::from_value(v.clone()).map_err(|e| malformed(format!("bad image reference: {e}")))?
                    }
                };
                let dense_caption = match obj.get(&m.dense_caption) {
                    None | Some(serde_json::Value::Null) => None,
                    Some(serde_json::Value::String(s)) => Some(s.clone()),
                    Some(_) => return Err(malformed("dense caption is not a string".into())),
                };
                ImageTextPair {
                    id,
                    image_ref,
                    caption,
                    dense_caption,
                }
            }
            Some(cols) => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != cols.len() {
                    return Err(malformed(format!(
                        "expected {} columns, found {}",
                        cols.len(),
                        fields.len()
                    )));
                }
                let get = |name: &str| cols.iter().position(|c| c == name).map(|i| fields[i].to_owned());
                let caption = get(&m.caption).ok_or_else(|| malformed("missing caption".into()))?;
                ImageTextPair {
                    id: get(&m.id).filter(|s| !s.is_empty()).unwrap_or_else(synth_id),
                    image_ref: get(&m.image).map_or(ImageRef::None, |s| ImageRef::guess(&s)),
                    caption,
                    dense_caption: get(&m.dense_caption).filter(|s| !s.is_empty()),
                }
            }
        };
        validate_pair(pair, &self.src.policy).map_err(|e| malformed(e.to_string()))
    }
}

impl Iterator for PairStream {
    type Item = Result<ImageTextPair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            if self.current.is_none() {
                if self.shard_idx >= self.src.shards.len() {
                    self.done = true;
                    return None;
                }
                if let Err(e) = self.open_current() {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            let shard = self.current.as_mut().expect("shard opened above");
            let line = match shard.lines.next() {
                None => {
                    self.current = None;
                    self.shard_idx += 1;
                    continue;
                }
                Some(Err(e)) => {
                    self.done = true;
                    let path = self.src.shards[self.shard_idx].clone();
                    return Some(Err(Error::io(path, e)));
                }
                Some(Ok(line)) => line,
            };
            let row = shard.row;
            shard.row += 1;
            if line.trim().is_empty() {
                continue;
            }
            let header = shard.header.take();
            let parsed = self.parse_row(&line, row, header.as_deref());
            if let Some(shard) = self.current.as_mut() {
                shard.header = header;
            }
            match parsed {
                Ok(pair) => return Some(Ok(pair)),
                Err(e) => match self.src.malformed {
                    MalformedPolicy::Fail => {
                        self.done = true;
                        return Some(Err(e));
                    }
                    MalformedPolicy::SkipWithCount => {
                        warn!("skipping row: {e}");
                        self.skipped += 1;
                    }
                },
            }
        }
    }
}

/// Writes newline-delimited JSON, one value per line.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for JsonlWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Reads every nonblank line of a JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            shard: path.display().to_string(),
            row,
            reason: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Splits `pairs` into JSONL shards of at most `shard_size` records named
/// `shard-00000.jsonl`, … and returns the manifest (also saved as
/// `manifest.json` in `out_dir`).
pub fn write_pairs<I>(pairs: I, out_dir: &Path, shard_size: usize) -> Result<RunManifest>
where
    I: IntoIterator<Item = Result<ImageTextPair>>,
{
    if shard_size == 0 {
        return Err(Error::InvalidConfig("shard_size must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut shards = Vec::new();
    let mut writer: Option<JsonlWriter> = None;
    let mut in_shard = 0u64;
    for pair in pairs {
        let pair = pair?;
        if writer.is_none() || in_shard as usize == shard_size {
            if let Some(mut w) = writer.take() {
                w.flush()?;
            }
            let name = format!("shard-{:05}.jsonl", shards.len());
            writer = Some(JsonlWriter::create(&out_dir.join(&name))?);
            shards.push(ShardEntry {
                path: PathBuf::from(name),
                count: 0,
            });
            in_shard = 0;
        }
        writer.as_mut().expect("writer opened above").write(&pair)?;
        in_shard += 1;
        shards.last_mut().expect("shard pushed above").count = in_shard;
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    let digest = config_digest(&serde_json::json!({
        "op": "write_pairs",
        "shard_size": shard_size,
    }))?;
    let manifest = RunManifest {
        run_id: format!("pairs-{}", &digest[..12]),
        shards,
        config_digest: digest,
        completed_log: None,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Append-only log of completed pair ids, one per line.
///
/// A single writer owns the log. Ids are buffered and reach disk only on
/// [`ProgressLog::flush`], so the caller decides checkpoint boundaries (the
/// batch scorer flushes its output file first, then the log).
pub struct ProgressLog {
    path: PathBuf,
    completed: HashSet<String>,
    out: BufWriter<File>,
}

impl ProgressLog {
    pub fn open(path: &Path) -> Result<Self> {
        let completed = Self::replay(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ProgressLog {
            path: path.to_path_buf(),
            completed,
            out: BufWriter::new(file),
        })
    }

    /// Reads the set of completed ids; a missing file is an empty log. A
    /// trailing line without a newline was cut mid-write and is ignored.
    pub fn replay(path: &Path) -> Result<HashSet<String>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..i],
            None => "",
        };
        Ok(complete.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, id: &str) -> bool {
        self.completed.contains(id)
    }

    pub fn completed(&self) -> &HashSet<String> {
        &self.completed
    }

    pub fn len(&self) -> usize {
        self.completed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completed.is_empty()
    }

    /// Records `id` as done. Returns false if it was already logged.
    pub fn record(&mut self, id: &str) -> Result<bool> {
        if !self.completed.insert(id.to_owned()) {
            return Ok(false);
        }
        writeln!(self.out, "{id}").map_err(|e| Error::io(&self.path, e))?;
        Ok(true)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for ProgressLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Drops pairs whose ids are already in `completed`, preserving order.
pub fn resume_filter<'a, I>(
    stream: I,
    completed: &'a HashSet<String>,
) -> impl Iterator<Item = Result<ImageTextPair>> + 'a
where
    I: IntoIterator<Item = Result<ImageTextPair>>,
    I::IntoIter: 'a,
{
    stream.into_iter().filter(move |p| match p {
        Ok(pair) => !completed.contains(&pair.id),
        Err(_) => true,
    })
}
