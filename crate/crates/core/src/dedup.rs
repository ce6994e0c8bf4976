//! Near-duplicate image grouping over embedding distances, and the
//! precision/recall sweep used to pick the distance threshold.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ensure_parent, EmbeddingTable};
use crate::union_find::DisjointSet;

/// Image counts above this use the grid pre-filter instead of all pairs.
pub const DEFAULT_GRID_CUTOFF: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDedupMap {
    representative: BTreeMap<String, String>,
    threshold: f64,
}

impl ImageDedupMap {
    /// Canonical id for `image_id`; ids without an embedding map to themselves.
    pub fn canonical<'a>(&'a self, image_id: &'a str) -> &'a str {
        self.representative
            .get(image_id)
            .map(String::as_str)
            .unwrap_or(image_id)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn representatives(&self) -> &BTreeMap<String, String> {
        &self.representative
    }

    /// Groups keyed by canonical id, members sorted.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, rep) in &self.representative {
            out.entry(rep.as_str()).or_default().push(id.as_str());
        }
        out
    }

    pub fn group_count(&self) -> usize {
        self.groups().len()
    }

    /// CSV layout: `image_id,canonical_id`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id", "canonical_id"])?;
        for (id, rep) in &self.representative {
            w.write_record([id, rep])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, threshold: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            image_id: String,
            canonical_id: String,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut representative = BTreeMap::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            representative.insert(row.image_id, row.canonical_id);
        }
        for rep in representative.values() {
            if representative.get(rep).is_some_and(|r| r != rep) {
                return Err(Error::Format(format!("dedup map is not idempotent at `{rep}`")));
            }
        }
        Ok(Self {
            representative,
            threshold,
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-linkage grouping: images connected by a chain of pairs at
/// Euclidean distance strictly below `threshold` share a canonical id, the
/// lexicographically smallest member id.
pub fn dedup_images(embeddings: &EmbeddingTable, threshold: f64) -> Result<ImageDedupMap> {
    dedup_images_with(embeddings, threshold, DEFAULT_GRID_CUTOFF)
}

pub fn dedup_images_with(
    embeddings: &EmbeddingTable,
    threshold: f64,
    grid_cutoff: usize,
) -> Result<ImageDedupMap> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "dedup threshold must be positive, got {threshold}"
        )));
    }
    let n = embeddings.len();
    let pairs = if n > grid_cutoff {
        close_pairs_grid(embeddings, threshold)
    } else {
        close_pairs_exhaustive(embeddings, threshold)
    };

    let mut ds = DisjointSet::new(n);
    for (a, b) in pairs {
        ds.union(a, b);
    }
    let ids = embeddings.ids();
    let mut representative = BTreeMap::new();
    for group in ds.groups() {
        let canonical = group.iter().map(|&i| &ids[i]).min().unwrap().clone();
        for i in group {
            representative.insert(ids[i].clone(), canonical.clone());
        }
    }
    Ok(ImageDedupMap {
        representative,
        threshold,
    })
}

fn close_pairs_exhaustive(emb: &EmbeddingTable, threshold: f64) -> Vec<(usize, usize)> {
    let t2 = threshold * threshold;
    (0..emb.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = emb.vector(i);
            (i + 1..emb.len())
                .filter(move |&j| sq_dist(a, emb.vector(j)) < t2)
                .map(move |j| (i, j))
        })
        .collect()
}

/// Buckets points by their coordinates along the (up to three) highest
/// variance axes in cells of side `threshold`. Projection onto an axis never
/// increases distance, so every pair under the threshold lies in the same or
/// an adjacent cell.
fn close_pairs_grid(emb: &EmbeddingTable, threshold: f64) -> Vec<(usize, usize)> {
    let n = emb.len();
    let dim = emb.dim();
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(emb.vector(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for i in 0..n {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(emb.vector(i)) {
            *v += (x - m) * (x - m);
        }
    }
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    axes.truncate(dim.min(3));

    let cell_of = |i: usize| -> Vec<i64> {
        let v = emb.vector(i);
        axes.iter().map(|&a| (v[a] / threshold).floor() as i64).collect()
    };
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for i in 0..n {
        cells.entry(cell_of(i)).or_default().push(i);
    }

    let offsets: Vec<Vec<i64>> = (0..3usize.pow(axes.len() as u32))
        .map(|mut code| {
            (0..axes.len())
                .map(|_| {
                    let d = (code % 3) as i64 - 1;
                    code /= 3;
                    d
                })
                .collect()
        })
        .collect();
    let t2 = threshold * threshold;
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let home = cell_of(i);
            let a = emb.vector(i);
            let mut found = Vec::new();
            for off in &offsets {
                let key: Vec<i64> = home.iter().zip(off).map(|(c, d)| c + d).collect();
                if let Some(members) = cells.get(&key) {
                    found.extend(
                        members
                            .iter()
                            .copied()
                            .filter(|&j| j > i && sq_dist(a, emb.vector(j)) < t2)
                            .map(|j| (i, j)),
                    );
                }
            }
            found
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Duplicate,
    NearDuplicate,
    Different,
    Unknown,
}

impl FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "duplicate" => Ok(PairLabel::Duplicate),
            "near_duplicate" => Ok(PairLabel::NearDuplicate),
            "different" => Ok(PairLabel::Different),
            "unknown" => Ok(PairLabel::Unknown),
            other => Err(Error::Format(format!("unknown pair label `{other}`"))),
        }
    }
}

/// A manually labeled, unordered image pair with its embedding distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub image_a: String,
    pub image_b: String,
    pub label: PairLabel,
    pub distance: f64,
}

/// CSV layout: `image_a,image_b,label,distance`.
pub fn read_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let field = |i: usize| {
            row.get(i)
                .ok_or_else(|| Error::Format(format!("pair row {}: missing field {i}", n + 1)))
        };
        let pair = LabeledPair {
            image_a: field(0)?.to_owned(),
            image_b: field(1)?.to_owned(),
            label: field(2)?.parse()?,
            distance: field(3)?
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("pair row {}: bad distance", n + 1)))?,
        };
        if pair.image_a == pair.image_b {
            return Err(Error::Format(format!(
                "pair row {}: self-pair `{}`",
                n + 1,
                pair.image_a
            )));
        }
        out.push(pair);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionPoint {
    pub threshold: f64,
    /// Duplicate-or-near-duplicate share among labeled pairs below the
    /// threshold; `None` when no pair is below it.
    pub precision: Option<f64>,
    pub recall_dup: Option<f64>,
    pub recall_dup_or_near: Option<f64>,
    pub pairs_below: usize,
}

/// Precision and recall of "distance < t means duplicate" for each `t`.
/// Pairs labeled `Unknown` are ignored.
pub fn precision_curve(pairs: &[LabeledPair], thresholds: &[f64]) -> Vec<PrecisionPoint> {
    let mut known: Vec<(f64, PairLabel)> = pairs
        .iter()
        .filter(|p| p.label != PairLabel::Unknown)
        .map(|p| (p.distance, p.label))
        .collect();
    known.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Prefix counts of (duplicate, near-duplicate) over pairs sorted by distance.
    let mut prefix = Vec::with_capacity(known.len() + 1);
    prefix.push((0usize, 0usize));
    for &(_, label) in &known {
        let (d, nd) = *prefix.last().unwrap();
        prefix.push(match label {
            PairLabel::Duplicate => (d + 1, nd),
            PairLabel::NearDuplicate => (d, nd + 1),
            _ => (d, nd),
        });
    }
    let (total_dup, total_near) = *prefix.last().unwrap();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);

    thresholds
        .iter()
        .map(|&t| {
            let below = known.partition_point(|&(d, _)| d < t);
            let (dup, near) = prefix[below];
            PrecisionPoint {
                threshold: t,
                precision: ratio(dup + near, below),
                recall_dup: ratio(dup, total_dup),
                recall_dup_or_near: ratio(dup + near, total_dup + total_near),
                pairs_below: below,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        EmbeddingTable::from_rows(rows.iter().map(|(id, v)| (*id, v.clone()))).unwrap()
    }

    #[test]
    fn identical_vectors_form_one_group() {
        let t = table(&[("c", vec![1.0, 2.0]), ("a", vec![1.0, 2.0]), ("b", vec![1.0, 2.0])]);
        let map = dedup_images(&t, 10.0).unwrap();
        assert_eq!(map.group_count(), 1);
        assert!(["a", "b", "c"].iter().all(|id| map.canonical(id) == "a"));
    }

    #[test]
    fn distant_vectors_stay_singletons() {
        let t = table(&[("a", vec![0.0, 0.0]), ("b", vec![100.0, 0.0]), ("c", vec![50.0, 86.6])]);
        assert_eq!(dedup_images(&t, 10.0).unwrap().group_count(), 3);
    }

    #[test]
    fn chains_close_transitively() {
        // a-b 8, b-c 8, a-c 15.
        let bx = 7.5;
        let by = (64.0f64 - bx * bx).sqrt();
        let t = table(&[("a", vec![0.0, 0.0]), ("b", vec![bx, by]), ("c", vec![15.0, 0.0])]);
        let map = dedup_images(&t, 10.0).unwrap();
        assert_eq!(map.group_count(), 1);
        assert_eq!(map.canonical("c"), "a");
    }

    #[test]
    fn threshold_is_strict() {
        let t = table(&[("a", vec![0.0]), ("b", vec![10.0])]);
        assert_eq!(dedup_images(&t, 10.0).unwrap().group_count(), 2);
        assert_eq!(dedup_images(&t, 10.000001).unwrap().group_count(), 1);
    }

    #[test]
    fn bad_threshold_rejected() {
        let t = table(&[("a", vec![0.0])]);
        assert!(dedup_images(&t, 0.0).is_err());
        assert!(dedup_images(&t, f64::NAN).is_err());
    }

    #[test]
    fn unknown_images_map_to_themselves() {
        let t = table(&[("a", vec![0.0])]);
        assert_eq!(dedup_images(&t, 1.0).unwrap().canonical("zzz"), "zzz");
    }

    #[test]
    fn precision_ratios() {
        let mk = |label, distance| LabeledPair {
            image_a: "x".into(),
            image_b: "y".into(),
            label,
            distance,
        };
        let all_dup = [mk(PairLabel::Duplicate, 1.0), mk(PairLabel::Duplicate, 2.0)];
        assert_eq!(precision_curve(&all_dup, &[5.0])[0].precision, Some(1.0));

        let mixed = [
            mk(PairLabel::Duplicate, 1.0),
            mk(PairLabel::Duplicate, 2.0),
            mk(PairLabel::Different, 3.0),
            mk(PairLabel::Different, 4.0),
            mk(PairLabel::Unknown, 0.5),
        ];
        let p = precision_curve(&mixed, &[0.5, 5.0]);
        assert_eq!(p[0].precision, None);
        assert_eq!(p[1].precision, Some(0.5));
        assert_eq!(p[1].recall_dup, Some(1.0));
    }

    fn random_table() -> impl Strategy<Value = EmbeddingTable> {
        (1usize..4).prop_flat_map(|dim| {
            proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, dim), 1..40).prop_map(
                |rows| {
                    EmbeddingTable::from_rows(
                        rows.into_iter().enumerate().map(|(i, v)| (format!("img{i:03}"), v)),
                    )
                    .unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn grid_prefilter_finds_every_pair(t in random_table(), threshold in 0.5f64..15.0) {
            let mut exhaustive = close_pairs_exhaustive(&t, threshold);
            exhaustive.sort_unstable();
            prop_assert_eq!(close_pairs_grid(&t, threshold), exhaustive);
        }

        #[test]
        fn grouping_is_order_invariant(t in random_table(), threshold in 0.5f64..15.0) {
            let forward = dedup_images(&t, threshold).unwrap();
            let reversed = EmbeddingTable::from_rows(
                t.iter().collect::<Vec<_>>().into_iter().rev().map(|(id, v)| (id.to_owned(), v.to_vec())),
            ).unwrap();
            prop_assert_eq!(dedup_images(&reversed, threshold).unwrap(), forward);
        }

        #[test]
        fn representative_is_idempotent(t in random_table(), threshold in 0.5f64..15.0) {
            let map = dedup_images(&t, threshold).unwrap();
            for rep in map.representatives().values() {
                prop_assert_eq!(map.canonical(rep), rep.as_str());
            }
        }
    }
}
