//! Precomputed side inputs: image embeddings, per-post scores, claim labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Fixed-dimension vectors keyed by image id, stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table: Option<EmbeddingTable> = None;
        for (id, v) in rows {
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
            t.push(id.into(), &v)?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn push(&mut self, id: String, vector: &[f64]) -> Result<()> {
        if self.ids.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.ids.push(id);
        self.values.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn vector(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.vector(i)))
    }

    /// CSV layout: `image_id,v0,...,vD-1` with a header row.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let mut table = EmbeddingTable::default();
        for (row_no, rec) in reader.records().enumerate() {
            let rec = rec?;
            let id = rec
                .get(0)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Format(format!("embedding row {} has no id", row_no + 1)))?;
            let v = rec
                .iter()
                .skip(1)
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|_| {
                        Error::Format(format!("embedding `{id}` has non-numeric value `{x}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(id.to_owned(), &v)?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["image_id".to_owned()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (id, v) in self.iter() {
            let mut row = vec![id.to_owned()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Binary layout (little endian): magic `EMB1`, `u32` dimension, `u64`
    /// count, then per row a `u32` id length, the UTF-8 id bytes, and `dim`
    /// `f32` values.
    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let truncated = || Error::Format(format!("{} is truncated", path.display()));
        let mut cursor = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(truncated());
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != EMBEDDING_MAGIC {
            return Err(Error::Format(format!("{} is not an embedding file", path.display())));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut table = EmbeddingTable::new(dim);
        let mut v = vec![0.0; dim];
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?)
                .map_err(|_| Error::Format("embedding id is not UTF-8".into()))?
                .to_owned();
            for slot in v.iter_mut() {
                *slot = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
            }
            table.push(id, &v)?;
        }
        Ok(table)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(EMBEDDING_MAGIC)?;
        write(&(self.dim as u32).to_le_bytes())?;
        write(&(self.len() as u64).to_le_bytes())?;
        for (id, v) in self.iter() {
            write(&(id.len() as u32).to_le_bytes())?;
            write(id.as_bytes())?;
            for x in v {
                write(&(*x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Picks the reader by extension: `.csv` is text, anything else binary.
    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::read_csv(path),
            _ => Self::read_binary(path),
        }
    }
}

/// Per-post metric scores in `[0, 1]`, keyed by `(post_id, metric)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostScores {
    scores: BTreeMap<(String, String), f64>,
}

impl PostScores {
    pub fn insert(&mut self, post_id: &str, metric: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!(
                "score {score} for post `{post_id}` metric `{metric}` is outside [0, 1]"
            )));
        }
        self.scores
            .insert((post_id.to_owned(), metric.to_owned()), score);
        Ok(())
    }

    pub fn get(&self, post_id: &str, metric: &str) -> Option<f64> {
        self.scores
            .get(&(post_id.to_owned(), metric.to_owned()))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.scores
            .iter()
            .map(|((p, m), s)| (p.as_str(), m.as_str(), *s))
    }

    pub fn metrics(&self) -> BTreeSet<&str> {
        self.scores.keys().map(|(_, m)| m.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Long CSV layout: `post_id,metric,score`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            post_id: String,
            metric: String,
            score: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut out = PostScores::default();
        for row in reader.deserialize() {
            let row: Row = row?;
            out.insert(&row.post_id, &row.metric, row.score)?;
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["post_id", "metric", "score"])?;
        for (p, m, s) in self.iter() {
            w.write_record([p, m, &s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimLabel {
    Misleading,
    NotMisleading,
}

/// CSV layout: `post_id,label` with label `misleading` or `not_misleading`.
pub fn read_claim_labels(path: &Path) -> Result<BTreeMap<String, ClaimLabel>> {
    #[derive(Deserialize)]
    struct Row {
        post_id: String,
        label: ClaimLabel,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        out.insert(row.post_id, row.label);
    }
    Ok(out)
}

pub fn write_claim_labels(path: &Path, labels: &BTreeMap<String, ClaimLabel>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["post_id", "label"])?;
    for (post, label) in labels {
        let label = match label {
            ClaimLabel::Misleading => "misleading",
            ClaimLabel::NotMisleading => "not_misleading",
        };
        w.write_record([post.as_str(), label])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// All side inputs for one run; any table may be absent.
#[derive(Debug, Clone, Default)]
pub struct SidecarTables {
    pub image_embeddings: Option<EmbeddingTable>,
    pub post_scores: Option<PostScores>,
    pub claim_labels: Option<BTreeMap<String, ClaimLabel>>,
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = EmbeddingTable::from_rows([("a", vec![1.0, 2.0]), ("b", vec![1.0])]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, found: 1, .. }));
    }

    #[test]
    fn embedding_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let table =
            EmbeddingTable::from_rows([("img1", vec![0.5, -1.25]), ("img2", vec![3.0, 4.0])]).unwrap();
        let bin = dir.path().join("e.bin");
        let csv = dir.path().join("e.csv");
        table.write_binary(&bin).unwrap();
        table.write_csv(&csv).unwrap();
        assert_eq!(EmbeddingTable::read(&bin).unwrap(), table);
        assert_eq!(EmbeddingTable::read(&csv).unwrap(), table);
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        let mut s = PostScores::default();
        assert!(s.insert("p", "toxicity", 1.5).is_err());
        s.insert("p", "toxicity", 0.25).unwrap();
        assert_eq!(s.get("p", "toxicity"), Some(0.25));
    }

    #[test]
    fn claim_labels_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.csv");
        fs::write(&path, "post_id,label\np1,misleading\np2,not_misleading\n").unwrap();
        let labels = read_claim_labels(&path).unwrap();
        assert_eq!(labels["p1"], ClaimLabel::Misleading);
        assert_eq!(labels["p2"], ClaimLabel::NotMisleading);
    }
}
