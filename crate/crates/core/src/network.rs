//! Edge-union merge of pruned networks, coordinated components, and
//! per-component descriptive tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::indicators::IndicatorKind;
use crate::ingest::{ensure_parent, Corpus, PostKind};
use crate::similarity::SimilarityNetwork;
use crate::union_find::DisjointSet;

/// Unweighted union of networks; each edge remembers which indicators
/// produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergedNetwork {
    edges: BTreeMap<(String, String), BTreeSet<IndicatorKind>>,
}

impl MergedNetwork {
    pub fn edges(&self) -> &BTreeMap<(String, String), BTreeSet<IndicatorKind>> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        self.edges
            .keys()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .collect()
    }

    /// Edges produced by more than one indicator kind.
    pub fn mixed_provenance_count(&self) -> usize {
        self.edges.values().filter(|k| k.len() > 1).count()
    }

    /// CSV layout: `user_a,user_b,retweet,hashtag,url,token,image` with 0/1 flags.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["user_a", "user_b"];
        header.extend(IndicatorKind::ALL.iter().map(|k| k.as_str()));
        w.write_record(&header)?;
        for ((a, b), kinds) in &self.edges {
            let mut row = vec![a.clone(), b.clone()];
            row.extend(
                IndicatorKind::ALL
                    .iter()
                    .map(|k| if kinds.contains(k) { "1" } else { "0" }.to_owned()),
            );
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn merge_networks(nets: &[SimilarityNetwork]) -> MergedNetwork {
    let mut edges: BTreeMap<(String, String), BTreeSet<IndicatorKind>> = BTreeMap::new();
    for net in nets {
        for e in &net.edges {
            let key = if e.user_a <= e.user_b {
                (e.user_a.clone(), e.user_b.clone())
            } else {
                (e.user_b.clone(), e.user_a.clone())
            };
            edges.entry(key).or_default().insert(net.kind);
        }
    }
    MergedNetwork { edges }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoordinationComponent {
    /// 1-based; component 1 is the largest.
    pub component_id: usize,
    pub members: BTreeSet<String>,
    pub edge_provenance: BTreeMap<(String, String), BTreeSet<IndicatorKind>>,
    /// Most frequent indicator over the component's edges; ties go to the
    /// kind listed first in [`IndicatorKind::ALL`].
    pub dominant_kind: IndicatorKind,
}

impl CoordinationComponent {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, user: &str) -> bool {
        self.members.contains(user)
    }
}

/// Connected components with at least `min_size` members, largest first
/// (ties by smallest member id), numbered from 1.
pub fn components(g: &MergedNetwork, min_size: usize) -> Vec<CoordinationComponent> {
    let nodes: Vec<&str> = g.nodes().into_iter().collect();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut ds = DisjointSet::new(nodes.len());
    for (a, b) in g.edges.keys() {
        ds.union(index[a.as_str()], index[b.as_str()]);
    }
    let mut groups: Vec<Vec<usize>> = ds
        .groups()
        .into_iter()
        .filter(|grp| grp.len() >= min_size.max(1))
        .collect();
    // Node indices follow sorted ids, so grp[0] is the smallest member id.
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut root_of: HashMap<usize, usize> = HashMap::new();
    for (ci, grp) in groups.iter().enumerate() {
        for &n in grp {
            root_of.insert(n, ci);
        }
    }
    let mut provenance: Vec<BTreeMap<(String, String), BTreeSet<IndicatorKind>>> =
        vec![BTreeMap::new(); groups.len()];
    for (key, kinds) in &g.edges {
        if let Some(&ci) = root_of.get(&index[key.0.as_str()]) {
            provenance[ci].insert(key.clone(), kinds.clone());
        }
    }

    groups
        .into_iter()
        .zip(provenance)
        .enumerate()
        .map(|(ci, (grp, edge_provenance))| {
            let mut counts = [0usize; 5];
            for kinds in edge_provenance.values() {
                for k in kinds {
                    counts[*k as usize] += 1;
                }
            }
            let dominant = (0..5).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            CoordinationComponent {
                component_id: ci + 1,
                members: grp.iter().map(|&n| nodes[n].to_owned()).collect(),
                edge_provenance,
                dominant_kind: IndicatorKind::ALL[dominant],
            }
        })
        .collect()
}

/// CSV layout: `component_id,user_id`.
pub fn write_membership_csv(path: &Path, comps: &[CoordinationComponent]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component_id", "user_id"])?;
    for c in comps {
        for m in &c.members {
            w.write_record([c.component_id.to_string().as_str(), m])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Map from user id to component id.
pub fn membership(comps: &[CoordinationComponent]) -> HashMap<&str, usize> {
    comps
        .iter()
        .flat_map(|c| c.members.iter().map(move |m| (m.as_str(), c.component_id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TweetTypeMix {
    pub posts: usize,
    pub original: f64,
    pub retweet: f64,
    pub quote: f64,
    pub reply: f64,
}

impl TweetTypeMix {
    pub fn share(&self, kind: PostKind) -> f64 {
        match kind {
            PostKind::Original => self.original,
            PostKind::Retweet => self.retweet,
            PostKind::Quote => self.quote,
            PostKind::Reply => self.reply,
        }
    }
}

/// Shares of each post kind among member-authored posts; `None` when the
/// members authored nothing.
pub fn tweet_type_mix(c: &CoordinationComponent, corpus: &Corpus) -> Option<TweetTypeMix> {
    let mut counts = [0usize; 4];
    for m in &c.members {
        for p in corpus.posts_by(m) {
            counts[p.kind.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let share = |k: PostKind| counts[k.index()] as f64 / total as f64;
    Some(TweetTypeMix {
        posts: total,
        original: share(PostKind::Original),
        retweet: share(PostKind::Retweet),
        quote: share(PostKind::Quote),
        reply: share(PostKind::Reply),
    })
}

/// Corpus-wide count of retweets received per account.
#[derive(Debug, Clone, Default)]
pub struct RetweetCounts {
    received: HashMap<String, u64>,
}

impl RetweetCounts {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut received: HashMap<String, u64> = HashMap::new();
        for p in corpus.posts() {
            if let Some(t) = &p.retweeted_author_id {
                *received.entry(t.clone()).or_default() += 1;
            }
        }
        Self { received }
    }

    pub fn received(&self, account: &str) -> u64 {
        self.received.get(account).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetweetTarget {
    /// Retweeted account, or `None` for the merged "Other" row.
    pub target_account: Option<String>,
    pub retweets: u64,
    /// Component retweets of this target / all component retweets.
    pub share_within_component: f64,
    /// Component retweets of this target / all corpus retweets of it.
    /// Not defined for the "Other" row.
    pub coordination_reliance: Option<f64>,
}

impl RetweetTarget {
    pub fn label(&self) -> &str {
        self.target_account.as_deref().unwrap_or("Other")
    }
}

pub fn top_retweeted(
    c: &CoordinationComponent,
    corpus: &Corpus,
    min_share: f64,
) -> Vec<RetweetTarget> {
    top_retweeted_with(c, corpus, &RetweetCounts::from_corpus(corpus), min_share)
}

/// Targets receiving at least `min_share` of the component's retweets, by
/// descending share; the rest are merged into a trailing "Other" row.
pub fn top_retweeted_with(
    c: &CoordinationComponent,
    corpus: &Corpus,
    counts: &RetweetCounts,
    min_share: f64,
) -> Vec<RetweetTarget> {
    let mut per_target: BTreeMap<&str, u64> = BTreeMap::new();
    for m in &c.members {
        for p in corpus.posts_by(m) {
            if let Some(t) = &p.retweeted_author_id {
                *per_target.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let total: u64 = per_target.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut rows: Vec<RetweetTarget> = Vec::new();
    let mut other = 0u64;
    for (target, n) in per_target {
        let share = n as f64 / total as f64;
        if share >= min_share {
            rows.push(RetweetTarget {
                target_account: Some(target.to_owned()),
                retweets: n,
                share_within_component: share,
                coordination_reliance: Some(n as f64 / counts.received(target).max(n) as f64),
            });
        } else {
            other += n;
        }
    }
    rows.sort_by(|a, b| b.retweets.cmp(&a.retweets).then(a.target_account.cmp(&b.target_account)));
    if other > 0 {
        rows.push(RetweetTarget {
            target_account: None,
            retweets: other,
            share_within_component: other as f64 / total as f64,
            coordination_reliance: None,
        });
    }
    rows
}
