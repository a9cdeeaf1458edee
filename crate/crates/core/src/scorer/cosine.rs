//! Embedding-cosine baseline and the binary embedding table it reads.
//!
//! Table layout, all little-endian: magic `MTEB`, `u32` version (1), `u32`
//! dimension `d`, `u64` record count `n`, then `n` records of `u16` id
//! length, id bytes (UTF-8), `d` × `f32` image vector, `d` × `f32` text
//! vector.

use std::io::{Read, Write};
use std::path::Path;

use crate::domain::{Metric, QualityScore, ScoreRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const TABLE_MAGIC: &[u8; 4] = b"MTEB";
pub const TABLE_VERSION: u32 = 1;

pub const COSINE_PROVENANCE: &str = "cosine-baseline";

/// Raw cosine similarity in [-1, 1].
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity on the 0..=100 integer scale: negative similarity
/// clamps to 0, rounding is half away from zero.
pub fn cosine_score(u: &[f32], v: &[f32]) -> Result<QualityScore> {
    let cos = cosine_similarity(u, v)?;
    let scaled = (100.0 * cos.max(0.0)).round();
    Ok(QualityScore::new(scaled as i64).expect("clamped to [0, 100]"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub image: Vec<f32>,
    pub text: Vec<f32>,
}

/// Precomputed image and text embeddings keyed by pair id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn push(&mut self, id: impl Into<String>, image: Vec<f32>, text: Vec<f32>) -> Result<()> {
        let id = id.into();
        for v in [&image, &text] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch(self.dim, v.len()));
            }
        }
        if image.iter().chain(&text).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding(self.rows.len()));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::BadEmbeddingTable(format!(
                "id of {} bytes is too long",
                id.len()
            )));
        }
        self.rows.push(EmbeddingRow { id, image, text });
        Ok(())
    }

    /// Text vectors as a row-major `n × d` matrix.
    pub fn text_matrix(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.text.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for row in &self.rows {
            w.write_all(&(row.id.len() as u16).to_le_bytes())?;
            w.write_all(row.id.as_bytes())?;
            for x in row.image.iter().chain(&row.text) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::BadEmbeddingTable(what.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != TABLE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != TABLE_VERSION {
            return Err(Error::BadEmbeddingTable(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let n = read_u64(&mut r).map_err(|_| bad("truncated header"))?;
        let mut table = EmbeddingTable::new(dim);
        let mut buf = vec![0u8; dim * 4];
        let mut read_vec = |r: &mut R| -> Result<Vec<f32>> {
            r.read_exact(&mut buf).map_err(|_| bad("truncated record"))?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect())
        };
        for i in 0..n {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(|_| bad("truncated record"))?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut id).map_err(|_| bad("truncated record"))?;
            let id =
                String::from_utf8(id).map_err(|_| Error::BadEmbeddingTable(format!("record {i}: id is not UTF-8")))?;
            let image = read_vec(&mut r)?;
            let text = read_vec(&mut r)?;
            table.push(id, image, text)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Baseline scores for every row, filed under `slot` so they can flow
    /// through the same threshold and filter machinery as model scores.
    pub fn score_records(&self, slot: Metric, exec: Exec) -> Result<Vec<ScoreRecord>> {
        exec.map(&self.rows, |row| {
            cosine_score(&row.image, &row.text)
                .map(|s| ScoreRecord::new(row.id.clone(), COSINE_PROVENANCE).with(slot, s))
        })
        .into_iter()
        .collect()
    }

    /// Cosine similarity scaled to [0, 100] without rounding, for
    /// correlation against human scores.
    pub fn scaled_similarities(&self, exec: Exec) -> Result<Vec<(String, f64)>> {
        exec.map(&self.rows, |row| {
            cosine_similarity(&row.image, &row.text).map(|c| (row.id.clone(), 100.0 * c.max(0.0)))
        })
        .into_iter()
        .collect()
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(cosine_score(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap().value(), 100);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value(), 0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap().value(), 0);
        assert!(matches!(
            cosine_score(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(1, 2))
        ));
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn rounds_half_away_from_zero() {
        // cos 60° = 0.5 exactly -> 50; vectors chosen so 100·cos = 70.71…
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 1.0]).unwrap().value(), 71);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.5, 0.75f32.sqrt()]).unwrap().value(), 50);
    }

    proptest! {
        #[test]
        fn scale_invariant(
            u in prop::collection::vec(-10.0f32..10.0, 4),
            v in prop::collection::vec(-10.0f32..10.0, 4),
            a in 0.5f32..4.0,
            b in 0.5f32..4.0,
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let base = cosine_similarity(&u, &v).unwrap();
            // Rounding boundaries are the only place float noise can flip
            // the integer score.
            prop_assume!(((100.0 * base.max(0.0)).fract() - 0.5).abs() > 1e-4);
            let su: Vec<f32> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * b).collect();
            prop_assert_eq!(cosine_score(&su, &sv).unwrap(), cosine_score(&u, &v).unwrap());
        }
    }

    #[test]
    fn table_round_trip_and_errors() {
        let mut t = EmbeddingTable::new(2);
        t.push("a", vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        t.push("bé", vec![0.5, -1.5], vec![2.0, 3.25]).unwrap();
        assert!(t.push("c", vec![1.0], vec![1.0, 0.0]).is_err());
        assert!(matches!(
            t.push("c", vec![f32::NAN, 0.0], vec![1.0, 0.0]),
            Err(Error::NonFiniteEmbedding(2))
        ));

        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MTEB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        // header + (2 + 1 + 16) + (2 + 3 + 16)
        assert_eq!(bytes.len(), 20 + 19 + 21);
        assert_eq!(EmbeddingTable::read_from(&bytes[..]).unwrap(), t);

        assert!(EmbeddingTable::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingTable::read_from(&bad[..]).is_err());

        let recs = t.score_records(Metric::Itm, Exec::Sequential).unwrap();
        assert_eq!(recs[0].get(Metric::Itm).unwrap().value(), 100);
        assert_eq!(recs[0].provenance, COSINE_PROVENANCE);
    }
}
