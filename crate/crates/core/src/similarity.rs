//! TF-IDF cosine projection of bipartite graphs onto user-user networks, and
//! pruning to the strongest edges.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::indicators::{BipartiteGraph, IndicatorKind};
use crate::ingest::ensure_parent;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfVariant {
    /// `ln(N / df)`.
    #[default]
    Log,
    /// `ln((1 + N) / (1 + df)) + 1`.
    Smoothed,
}

impl IdfVariant {
    pub fn idf(self, n_users: usize, df: usize) -> f64 {
        let (n, df) = (n_users as f64, df as f64);
        match self {
            IdfVariant::Log => (n / df).ln(),
            IdfVariant::Smoothed => ((1.0 + n) / (1.0 + df)).ln() + 1.0,
        }
    }
}

/// Sparse vector of `(indicator index, value)` sorted by index.
pub type SparseVector = Vec<(usize, f64)>;

/// One TF-IDF vector per user (indexed like `g.users()`); tf is the raw edge
/// weight. Zero entries are omitted.
pub fn tfidf_vectors(g: &BipartiteGraph, idf: IdfVariant) -> Vec<SparseVector> {
    let n = g.users().len();
    let idf_of: Vec<f64> = g.indicator_degrees().iter().map(|&df| idf.idf(n, df)).collect();
    (0..n)
        .map(|u| {
            g.row(u)
                .iter()
                .map(|&(i, w)| (i, w as f64 * idf_of[i]))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    /// `user_a < user_b`.
    pub user_a: String,
    pub user_b: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityNetwork {
    pub kind: IndicatorKind,
    /// Sorted by `(user_a, user_b)`; no self-loops or repeated pairs; weights
    /// in `(0, 1]`.
    pub edges: Vec<SimilarityEdge>,
}

impl SimilarityNetwork {
    pub fn new(kind: IndicatorKind, mut edges: Vec<SimilarityEdge>) -> Self {
        edges.sort_by(|a, b| (&a.user_a, &a.user_b).cmp(&(&b.user_a, &b.user_b)));
        Self { kind, edges }
    }

    /// Users with at least one edge.
    pub fn users(&self) -> BTreeSet<&str> {
        self.edges
            .iter()
            .flat_map(|e| [e.user_a.as_str(), e.user_b.as_str()])
            .collect()
    }

    /// TSV layout: `user_a<TAB>user_b<TAB>weight<TAB>kind` with a header row.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        for e in &self.edges {
            writeln!(w, "{}\t{}\t{}\t{}", e.user_a, e.user_b, e.weight, self.kind)?;
        }
        Ok(())
    }
}

pub fn write_networks_tsv(path: &Path, nets: &[SimilarityNetwork]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "user_a\tuser_b\tweight\tkind").map_err(io)?;
    for net in nets {
        net.write_tsv(&mut w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// GraphML export of one or more networks as a single undirected graph with
/// `weight` and `kind` edge attributes.
pub fn write_networks_graphml(path: &Path, nets: &[SimilarityNetwork]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let nodes: BTreeSet<&str> = nets.iter().flat_map(|n| n.users()).collect();
    let mut body = String::new();
    body.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    body.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    body.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
    body.push_str("  <key id=\"kind\" for=\"edge\" attr.name=\"kind\" attr.type=\"string\"/>\n");
    body.push_str("  <graph id=\"coordination\" edgedefault=\"undirected\">\n");
    for n in nodes {
        body.push_str(&format!("    <node id=\"{}\"/>\n", xml_escape(n)));
    }
    for net in nets {
        for e in &net.edges {
            body.push_str(&format!(
                "    <edge source=\"{}\" target=\"{}\"><data key=\"weight\">{}</data><data key=\"kind\">{}</data></edge>\n",
                xml_escape(&e.user_a),
                xml_escape(&e.user_b),
                e.weight,
                net.kind
            ));
        }
    }
    body.push_str("  </graph>\n</graphml>\n");
    w.write_all(body.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

/// Cosine similarity of TF-IDF vectors for every user pair sharing at least
/// one indicator with non-zero idf. Pairs are enumerated through an inverted
/// index, so users with disjoint profiles are never compared.
pub fn project(g: &BipartiteGraph, idf: IdfVariant) -> SimilarityNetwork {
    project_indexed(g, idf).materialize(|_| true)
}

/// Projected network whose edges refer to users by index, so large
/// projections can be pruned before any per-edge allocation.
struct IndexedNetwork<'a> {
    kind: IndicatorKind,
    users: &'a [String],
    /// `(a, b, weight)` with `a < b`, sorted by `(a, b)`.
    edges: Vec<(u32, u32, f64)>,
    /// Users with at least one edge.
    eligible: Vec<bool>,
}

impl IndexedNetwork<'_> {
    fn materialize(&self, keep: impl Fn(f64) -> bool) -> SimilarityNetwork {
        let edges = self
            .edges
            .iter()
            .filter(|e| keep(e.2))
            .map(|&(a, b, weight)| SimilarityEdge {
                user_a: self.users[a as usize].clone(),
                user_b: self.users[b as usize].clone(),
                weight,
            })
            .collect();
        SimilarityNetwork::new(self.kind, edges)
    }
}

fn project_indexed(g: &BipartiteGraph, idf: IdfVariant) -> IndexedNetwork<'_> {
    let vectors = tfidf_vectors(g, idf);
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt())
        .collect();

    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g.indicators().len()];
    for (u, v) in vectors.iter().enumerate() {
        for &(i, x) in v {
            postings[i].push((u, x));
        }
    }

    let n = vectors.len();
    let edges: Vec<(u32, u32, f64)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], Vec::new()),
            |(acc, touched), u| {
                for &(i, x) in &vectors[u] {
                    let list = &postings[i];
                    let start = list.partition_point(|&(v, _)| v <= u);
                    for &(v, y) in &list[start..] {
                        if acc[v] == 0.0 {
                            touched.push(v);
                        }
                        acc[v] += x * y;
                    }
                }
                touched.sort_unstable();
                let row: Vec<(u32, u32, f64)> = touched
                    .iter()
                    .filter(|&&v| acc[v] > 0.0)
                    .map(|&v| (u as u32, v as u32, (acc[v] / (norms[u] * norms[v])).min(1.0)))
                    .collect();
                for &v in touched.iter() {
                    acc[v] = 0.0;
                }
                touched.clear();
                row
            },
        )
        .flatten_iter()
        .collect();
    let mut eligible = vec![false; n];
    for &(a, b, _) in &edges {
        eligible[a as usize] = true;
        eligible[b as usize] = true;
    }
    IndexedNetwork {
        kind: g.kind(),
        users: g.users(),
        edges,
        eligible,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// K = floor(fraction · E(E−1)/2) over the union E of users with any
    /// edge, applied to the pooled edges of all networks.
    #[default]
    PooledPairSpace,
    /// K = floor(fraction · |edges|) within each network separately.
    PerNetworkEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneOutcome {
    pub networks: Vec<SimilarityNetwork>,
    /// Users with at least one non-zero similarity in any input network.
    pub eligible_users: usize,
    /// Target edge count (per network in `PerNetworkEdges` mode, summed).
    pub k: u64,
    /// Weight of the lowest retained edge, if any edge was retained.
    pub cutoff: Option<f64>,
    pub kept: usize,
}

/// Number of retained edges for `eligible` users: `floor(fraction · E(E−1)/2)`.
pub fn pooled_target(fraction: f64, eligible: usize) -> u64 {
    let e = eligible as u128;
    let pairs = e * e.saturating_sub(1) / 2;
    (fraction * pairs as f64).floor() as u64
}

/// Keeps the `k` highest-weight edges of the pooled multiset plus every edge
/// tied with the k-th weight. Returns the weight cutoff, or `None` when `k`
/// is zero.
fn top_k_cutoff(weights: &mut [f64], k: u64) -> Option<f64> {
    if k == 0 || weights.is_empty() {
        return None;
    }
    let k = (k as usize).min(weights.len());
    let (_, kth, _) = weights.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Some(*kth)
}

/// Which edges of one network survive pruning.
#[derive(Debug, Clone, Copy)]
enum Keep {
    All,
    AtLeast(f64),
    Nothing,
}

impl Keep {
    fn admits(self, w: f64) -> bool {
        match self {
            Keep::All => true,
            Keep::AtLeast(c) => w >= c,
            Keep::Nothing => false,
        }
    }
}

/// Decides the per-network cutoffs from the edge weights of each network.
fn prune_plan(
    mut weights: Vec<Vec<f64>>,
    eligible_users: usize,
    fraction: f64,
    mode: PruneMode,
) -> Result<(Vec<Keep>, u64)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "prune fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction >= 1.0 {
        return Ok((vec![Keep::All; weights.len()], pooled_target(fraction, eligible_users)));
    }
    let keep = |c: Option<f64>| c.map_or(Keep::Nothing, Keep::AtLeast);
    let (keeps, k) = match mode {
        PruneMode::PooledPairSpace => {
            let k = pooled_target(fraction, eligible_users);
            let mut pooled: Vec<f64> = weights.concat();
            let c = keep(top_k_cutoff(&mut pooled, k));
            (vec![c; weights.len()], k)
        }
        PruneMode::PerNetworkEdges => {
            let mut total = 0;
            let cs = weights
                .iter_mut()
                .map(|w| {
                    let k = (fraction * w.len() as f64).floor() as u64;
                    total += k;
                    keep(top_k_cutoff(w, k))
                })
                .collect();
            (cs, total)
        }
    };
    if k == 0 {
        warn!(fraction, eligible_users, "prune target K is zero; all edges dropped");
    }
    Ok((keeps, k))
}

fn prune_outcome(networks: Vec<SimilarityNetwork>, eligible_users: usize, k: u64) -> PruneOutcome {
    let kept = networks.iter().map(|n| n.edges.len()).sum();
    let cutoff = networks
        .iter()
        .flat_map(|n| n.edges.iter().map(|e| e.weight))
        .min_by(f64::total_cmp);
    PruneOutcome {
        networks,
        eligible_users,
        k,
        cutoff,
        kept,
    }
}

pub fn prune_top_fraction(
    networks: &[SimilarityNetwork],
    fraction: f64,
    mode: PruneMode,
) -> Result<PruneOutcome> {
    let eligible: BTreeSet<&str> = networks.iter().flat_map(|n| n.users()).collect();
    let weights = networks
        .iter()
        .map(|n| n.edges.iter().map(|e| e.weight).collect())
        .collect();
    let (keeps, k) = prune_plan(weights, eligible.len(), fraction, mode)?;
    let pruned = networks
        .iter()
        .zip(keeps)
        .map(|(net, keep)| SimilarityNetwork {
            kind: net.kind,
            edges: net.edges.iter().filter(|e| keep.admits(e.weight)).cloned().collect(),
        })
        .collect();
    Ok(prune_outcome(pruned, eligible.len(), k))
}

/// Projects every graph and prunes the results, equivalent to [`project`]
/// followed by [`prune_top_fraction`] but without materializing the edges
/// that pruning discards. Also returns the unpruned edge count per graph.
pub fn project_and_prune(
    graphs: &[BipartiteGraph],
    idf: IdfVariant,
    fraction: f64,
    mode: PruneMode,
) -> Result<(PruneOutcome, Vec<usize>)> {
    let projected: Vec<IndexedNetwork> = graphs.iter().map(|g| project_indexed(g, idf)).collect();
    let eligible: BTreeSet<&str> = projected
        .iter()
        .flat_map(|p| {
            p.users
                .iter()
                .zip(&p.eligible)
                .filter(|(_, e)| **e)
                .map(|(u, _)| u.as_str())
        })
        .collect();
    let weights = projected
        .iter()
        .map(|p| p.edges.iter().map(|e| e.2).collect())
        .collect();
    let (keeps, k) = prune_plan(weights, eligible.len(), fraction, mode)?;
    let counts = projected.iter().map(|p| p.edges.len()).collect();
    let pruned = projected
        .iter()
        .zip(keeps)
        .map(|(p, keep)| p.materialize(|w| keep.admits(w)))
        .collect();
    Ok((prune_outcome(pruned, eligible.len(), k), counts))
}
