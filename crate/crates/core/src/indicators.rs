//! User ↔ indicator bipartite graphs and their activity filters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dedup::ImageDedupMap;
use crate::error::{Error, Result};
use crate::ingest::{ensure_parent, Corpus, Post, PostKind, Tokenizer, UrlCleaner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    #[serde(rename = "retweet")]
    RetweetedAccount,
    Hashtag,
    Url,
    Token,
    Image,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 5] = [
        IndicatorKind::RetweetedAccount,
        IndicatorKind::Hashtag,
        IndicatorKind::Url,
        IndicatorKind::Token,
        IndicatorKind::Image,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorKind::RetweetedAccount => "retweet",
            IndicatorKind::Hashtag => "hashtag",
            IndicatorKind::Url => "url",
            IndicatorKind::Token => "token",
            IndicatorKind::Image => "image",
        }
    }

    /// Which post kinds contribute to this indicator.
    pub fn applies_to(self, kind: PostKind) -> bool {
        match self {
            IndicatorKind::RetweetedAccount => kind == PostKind::Retweet,
            IndicatorKind::Hashtag | IndicatorKind::Url | IndicatorKind::Token => {
                kind != PostKind::Retweet
            }
            IndicatorKind::Image => true,
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IndicatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown indicator kind `{s}`")))
    }
}

/// Weighted user ↔ indicator graph. Users and indicators are kept in sorted
/// order; each user row is sorted by indicator index and never stores a zero
/// weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    kind: IndicatorKind,
    users: Vec<String>,
    indicators: Vec<String>,
    rows: Vec<Vec<(usize, u64)>>,
}

impl BipartiteGraph {
    pub fn empty(kind: IndicatorKind) -> Self {
        Self {
            kind,
            users: Vec::new(),
            indicators: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Sums repeated `(user, indicator)` pairs and drops zero weights.
    pub fn from_triples<I, U, K>(kind: IndicatorKind, triples: I) -> Self
    where
        I: IntoIterator<Item = (U, K, u64)>,
        U: Into<String>,
        K: Into<String>,
    {
        let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (u, k, w) in triples {
            *weights.entry((u.into(), k.into())).or_default() += w;
        }
        Self::from_weight_map(kind, weights)
    }

    fn from_weight_map(kind: IndicatorKind, weights: BTreeMap<(String, String), u64>) -> Self {
        let weights: Vec<_> = weights.into_iter().filter(|(_, w)| *w > 0).collect();
        let mut indicators: Vec<String> = weights.iter().map(|((_, k), _)| k.clone()).collect();
        indicators.sort_unstable();
        indicators.dedup();
        let ind_index: HashMap<&str, usize> = indicators
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();

        let mut users: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<(usize, u64)>> = Vec::new();
        for ((u, k), w) in &weights {
            if users.last() != Some(u) {
                users.push(u.clone());
                rows.push(Vec::new());
            }
            rows.last_mut().unwrap().push((ind_index[k.as_str()], *w));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(i, _)| i);
        }
        Self {
            kind,
            users,
            indicators,
            rows,
        }
    }

    pub fn kind(&self) -> IndicatorKind {
        self.kind
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn indicators(&self) -> &[String] {
        &self.indicators
    }

    /// Row of `(indicator index, weight)` for user index `u`.
    pub fn row(&self, u: usize) -> &[(usize, u64)] {
        &self.rows[u]
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn total_weight(&self) -> u64 {
        self.rows.iter().flatten().map(|&(_, w)| w).sum()
    }

    /// Number of distinct users adjacent to each indicator.
    pub fn indicator_degrees(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.indicators.len()];
        for row in &self.rows {
            for &(i, _) in row {
                df[i] += 1;
            }
        }
        df
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.rows.iter().enumerate().flat_map(move |(u, row)| {
            row.iter()
                .map(move |&(i, w)| (self.users[u].as_str(), self.indicators[i].as_str(), w))
        })
    }

    pub fn weight(&self, user: &str, indicator: &str) -> Option<u64> {
        let u = self.users.binary_search_by(|x| x.as_str().cmp(user)).ok()?;
        let i = self
            .indicators
            .binary_search_by(|x| x.as_str().cmp(indicator))
            .ok()?;
        self.rows[u]
            .binary_search_by_key(&i, |&(j, _)| j)
            .ok()
            .map(|pos| self.rows[u][pos].1)
    }

    /// Keeps only edges for which `keep(user_idx, indicator_idx)` holds, then
    /// drops nodes left without edges.
    fn retain(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut weights = BTreeMap::new();
        for (u, row) in self.rows.iter().enumerate() {
            for &(i, w) in row {
                if keep(u, i) {
                    weights.insert((self.users[u].clone(), self.indicators[i].clone()), w);
                }
            }
        }
        Self::from_weight_map(self.kind, weights)
    }

    /// TSV export: a `#`-prefixed JSON header line, then
    /// `user<TAB>indicator<TAB>weight` rows.
    pub fn write_tsv(&self, path: &Path, header: &GraphHeader) -> Result<()> {
        ensure_parent(path)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "#{}", serde_json::to_string(header)?).map_err(io)?;
        for (u, k, weight) in self.edges() {
            if [u, k].iter().any(|s| s.contains(['\t', '\n', '\r'])) {
                return Err(Error::InvalidInput(format!(
                    "identifier `{}` cannot be written to TSV",
                    if u.contains(['\t', '\n', '\r']) { u } else { k }
                )));
            }
            writeln!(w, "{u}\t{k}\t{weight}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_tsv(path: &Path) -> Result<(Self, GraphHeader)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
        let header: GraphHeader = serde_json::from_str(
            first
                .strip_prefix('#')
                .ok_or_else(|| Error::Format("missing graph header line".into()))?,
        )?;
        let mut triples = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(u), Some(k), Some(w), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!("line {}: expected 3 fields", n + 2)));
            };
            let w: u64 = w
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad weight `{w}`", n + 2)))?;
            triples.push((u.to_owned(), k.to_owned(), w));
        }
        Ok((Self::from_triples(header.kind, triples), header))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub kind: IndicatorKind,
    pub filter: Option<FilterThresholds>,
}

/// External inputs a graph builder may need beyond the corpus.
#[derive(Debug, Clone, Copy)]
pub struct IndicatorSources<'a> {
    pub tokenizer: &'a Tokenizer,
    pub url_cleaner: &'a UrlCleaner,
    pub dedup: Option<&'a ImageDedupMap>,
}

/// Indicator keys contributed by one post; each entry adds 1 to the edge
/// weight.
///
/// Hashtags count once per post; URLs, tokens, and images count every
/// occurrence.
fn post_indicators(post: &Post, kind: IndicatorKind, src: &IndicatorSources<'_>) -> Vec<String> {
    if !kind.applies_to(post.kind) {
        return Vec::new();
    }
    match kind {
        IndicatorKind::RetweetedAccount => post.retweeted_author_id.iter().cloned().collect(),
        IndicatorKind::Hashtag => {
            let mut tags = post.hashtags.clone();
            tags.sort_unstable();
            tags.dedup();
            tags
        }
        IndicatorKind::Url => post
            .urls
            .iter()
            .map(|u| src.url_cleaner.clean(u).url)
            .collect(),
        IndicatorKind::Token => src.tokenizer.tokenize(&post.text),
        IndicatorKind::Image => {
            let dedup = src.dedup.expect("checked by build_bipartite");
            post.image_ids
                .iter()
                .map(|id| dedup.canonical(id).to_owned())
                .collect()
        }
    }
}

/// Builds the unfiltered bipartite graph for one indicator kind.
pub fn build_bipartite(
    corpus: &Corpus,
    kind: IndicatorKind,
    sources: &IndicatorSources<'_>,
) -> Result<BipartiteGraph> {
    if kind == IndicatorKind::Image && sources.dedup.is_none() {
        return Err(Error::Config(
            "the image indicator needs image embeddings and a dedup map".into(),
        ));
    }
    let weights = corpus
        .posts()
        .par_chunks(4096)
        .map(|chunk| {
            let mut local: HashMap<(String, String), u64> = HashMap::new();
            for post in chunk {
                for key in post_indicators(post, kind, sources) {
                    *local.entry((post.author_id.clone(), key)).or_default() += 1;
                }
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            if a.len() < b.len() {
                return merge_into(b, a);
            }
            for (k, w) in b {
                *a.entry(k).or_default() += w;
            }
            a
        });
    Ok(BipartiteGraph::from_weight_map(kind, weights.into_iter().collect()))
}

fn merge_into(
    mut big: HashMap<(String, String), u64>,
    small: HashMap<(String, String), u64>,
) -> HashMap<(String, String), u64> {
    for (k, w) in small {
        *big.entry(k).or_default() += w;
    }
    big
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_users_per_indicator: usize,
    pub min_indicators_per_user: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_users_per_indicator: 5,
            min_indicators_per_user: 5,
        }
    }
}

/// Drops indicators used by fewer than `min_users_per_indicator` distinct
/// users, then users adjacent to fewer than `min_indicators_per_user` of the
/// remaining indicators. Each filter runs once; nodes left without edges are
/// dropped.
///
/// Because the user pass can lower indicator degrees again, the result may
/// contain indicators below the user threshold. [`filter_bipartite_fixpoint`]
/// repeats both passes until neither removes anything.
pub fn filter_bipartite(g: &BipartiteGraph, t: FilterThresholds) -> BipartiteGraph {
    let df = g.indicator_degrees();
    let keep_ind: Vec<bool> = df.iter().map(|&d| d >= t.min_users_per_indicator).collect();
    let keep_user: Vec<bool> = g
        .rows
        .iter()
        .map(|row| row.iter().filter(|&&(i, _)| keep_ind[i]).count() >= t.min_indicators_per_user)
        .collect();
    g.retain(|u, i| keep_user[u] && keep_ind[i])
}

pub fn filter_bipartite_fixpoint(g: &BipartiteGraph, t: FilterThresholds) -> BipartiteGraph {
    let mut current = g.clone();
    loop {
        let next = filter_bipartite(&current, t);
        if next.edge_count() == current.edge_count() {
            return next;
        }
        current = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BipartiteSummary {
    pub kind: IndicatorKind,
    pub users: usize,
    pub indicators: usize,
    pub edges: usize,
    /// Indicators / users, a column ratio.
    pub ind_per_user: f64,
    /// Users / indicators, a column ratio.
    pub user_per_ind: f64,
    /// Mean weight over stored edges.
    pub avg_weight: f64,
}

pub fn bipartite_summary(g: &BipartiteGraph) -> BipartiteSummary {
    let users = g.users.len();
    let indicators = g.indicators.len();
    let edges = g.edge_count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    BipartiteSummary {
        kind: g.kind,
        users,
        indicators,
        edges,
        ind_per_user: ratio(indicators, users),
        user_per_ind: ratio(users, indicators),
        avg_weight: if edges == 0 {
            0.0
        } else {
            g.total_weight() as f64 / edges as f64
        },
    }
}
