//! Integrity-risk analyses over coordinated retweet amplification: the label
//! permutation test for concentration of misleading posts, the top-k
//! takedown simulation, and per-component misleading counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ensure_parent, Corpus};
use crate::network::CoordinationComponent;

/// Retweets of one post by one coordinated account.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AmplificationRecord {
    pub account_id: String,
    pub post_id: String,
    /// Component of the retweeting account.
    pub component_id: usize,
    pub action_count: u64,
}

/// Collects retweets made by component members, one record per
/// `(account, retweeted post)`. Retweets without a target post id are skipped.
pub fn amplification_records(
    corpus: &Corpus,
    membership: &HashMap<&str, usize>,
) -> Vec<AmplificationRecord> {
    let mut counts: BTreeMap<(&str, &str), (usize, u64)> = BTreeMap::new();
    for post in corpus.posts() {
        let (Some(target), Some(&comp)) = (
            post.retweeted_post_id.as_deref(),
            membership.get(post.author_id.as_str()),
        ) else {
            continue;
        };
        if !post.is_retweet() {
            continue;
        }
        counts.entry((&post.author_id, target)).or_insert((comp, 0)).1 += 1;
    }
    counts
        .into_iter()
        .map(|((account, post), (component_id, action_count))| AmplificationRecord {
            account_id: account.to_owned(),
            post_id: post.to_owned(),
            component_id,
            action_count,
        })
        .collect()
}

pub fn write_records_csv(path: &Path, records: &[AmplificationRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<AmplificationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for row in r.deserialize() {
        let rec: AmplificationRecord = row?;
        if rec.action_count == 0 {
            return Err(Error::Format(format!(
                "{}: zero action count for ({}, {})",
                path.display(),
                rec.account_id,
                rec.post_id
            )));
        }
        if !seen.insert((rec.account_id.clone(), rec.post_id.clone())) {
            return Err(Error::Format(format!(
                "{}: duplicate record ({}, {})",
                path.display(),
                rec.account_id,
                rec.post_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Posts retweeted by at least `min_accounts` distinct accounts of a single
/// component, mapped to that component. A post reaching the threshold in
/// several components goes to the one with the most amplifiers, ties to the
/// lower component id.
pub fn high_retweet_posts(
    records: &[AmplificationRecord],
    min_accounts: usize,
) -> BTreeMap<String, usize> {
    let mut amplifiers: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    for r in records {
        *amplifiers
            .entry(&r.post_id)
            .or_default()
            .entry(r.component_id)
            .or_default() += 1;
    }
    amplifiers
        .into_iter()
        .filter_map(|(post, per_comp)| {
            per_comp
                .into_iter()
                .filter(|&(_, n)| n >= min_accounts)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(comp, _)| (post.to_owned(), comp))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolRow {
    post_id: String,
    component_id: usize,
    misleading: bool,
}

/// Writes the high-retweet pool as `post_id,component_id,misleading`.
pub fn write_pool_csv(
    path: &Path,
    pool: &BTreeMap<String, usize>,
    misleading: &BTreeSet<String>,
) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for (post, &comp) in pool {
        w.serialize(PoolRow {
            post_id: post.clone(),
            component_id: comp,
            misleading: misleading.contains(post),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a pool written by [`write_pool_csv`].
pub fn read_pool_csv(path: &Path) -> Result<(BTreeMap<String, usize>, BTreeSet<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut pool = BTreeMap::new();
    let mut misleading = BTreeSet::new();
    for row in r.deserialize() {
        let row: PoolRow = row?;
        if row.misleading {
            misleading.insert(row.post_id.clone());
        }
        if pool.insert(row.post_id.clone(), row.component_id).is_some() {
            return Err(Error::Format(format!("{}: duplicate post `{}`", path.display(), row.post_id)));
        }
    }
    Ok((pool, misleading))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    /// Component of every post in the pool.
    pub post_component: BTreeMap<String, usize>,
    pub n_misleading: usize,
    pub n_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult {
    pub n_posts: usize,
    pub n_misleading: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub observed_components: usize,
    /// Fraction of draws spanning at most `observed_components` components.
    pub p_value: f64,
    /// Number of draws per count of distinct components hit.
    pub histogram: BTreeMap<usize, u64>,
}

/// Draws `n_misleading` posts uniformly without replacement, `n_draws`
/// times, and counts the distinct components each draw touches.
///
/// Draw `i` uses its own ChaCha stream `i` under the seed, so results do
/// not depend on how draws are scheduled across threads.
pub fn permutation_concentration_test(
    cfg: &PermutationConfig,
    observed_components: usize,
) -> Result<PermutationResult> {
    let n_posts = cfg.post_component.len();
    if observed_components == 0 {
        return Err(Error::InvalidInput("observed component count must be ≥ 1".into()));
    }
    if cfg.n_misleading == 0 || cfg.n_misleading > n_posts {
        return Err(Error::InvalidInput(format!(
            "cannot draw {} posts from a pool of {n_posts}",
            cfg.n_misleading
        )));
    }
    if cfg.n_draws == 0 {
        return Err(Error::InvalidInput("permutation test needs at least one draw".into()));
    }
    let labels: Vec<usize> = {
        let ids: BTreeSet<usize> = cfg.post_component.values().copied().collect();
        let dense: BTreeMap<usize, usize> = ids.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
        cfg.post_component.values().map(|c| dense[c]).collect()
    };
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);

    let histogram = (0..cfg.n_draws)
        .into_par_iter()
        .fold(
            || (vec![0u64; n_labels + 1], vec![false; n_labels]),
            |(mut hist, mut hit), draw| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(draw as u64);
                hit.iter_mut().for_each(|h| *h = false);
                let mut distinct = 0;
                for i in index::sample(&mut rng, n_posts, cfg.n_misleading) {
                    let l = labels[i];
                    if !hit[l] {
                        hit[l] = true;
                        distinct += 1;
                    }
                }
                hist[distinct] += 1;
                (hist, hit)
            },
        )
        .map(|(hist, _)| hist)
        .reduce(
            || vec![0u64; n_labels + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let at_most: u64 = histogram.iter().take(observed_components + 1).sum();
    Ok(PermutationResult {
        n_posts,
        n_misleading: cfg.n_misleading,
        n_draws: cfg.n_draws,
        seed: cfg.seed,
        observed_components,
        p_value: at_most as f64 / cfg.n_draws as f64,
        histogram: histogram
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TakedownSetup {
    /// Rank accounts by their actions on the known misleading posts.
    KnownMisleading,
    /// Rank accounts by their actions on every post in the records.
    Heuristic,
}

impl TakedownSetup {
    pub fn as_str(self) -> &'static str {
        match self {
            TakedownSetup::KnownMisleading => "known_misleading",
            TakedownSetup::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TakedownPoint {
    /// Requested number of removed accounts.
    pub k: usize,
    /// Accounts actually removed after clamping to the ranking length.
    pub removed_accounts: usize,
    pub clamped: bool,
    pub removed_actions: u64,
    /// Share of all misleading actions removed, in percent.
    pub removed_action_pct: f64,
    pub fully_suppressed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TakedownCurve {
    pub setup: TakedownSetup,
    /// Ranked `(account, ranking score)`.
    pub ranking: Vec<(String, u64)>,
    pub total_misleading_actions: u64,
    /// Misleading posts with at least one amplifier in the records.
    pub amplified_misleading_posts: usize,
    pub points: Vec<TakedownPoint>,
}

/// Removes the top-`k` ranked accounts for each `k` and measures how much
/// misleading amplification disappears with them. Ranking ties go to the
/// lower account id.
pub fn takedown_simulation(
    records: &[AmplificationRecord],
    misleading_posts: &BTreeSet<String>,
    setup: TakedownSetup,
    k_range: &[usize],
) -> Result<TakedownCurve> {
    if records.is_empty() {
        return Err(Error::InvalidInput("takedown simulation needs amplification records".into()));
    }
    if misleading_posts.is_empty() {
        return Err(Error::InvalidInput("takedown simulation needs misleading posts".into()));
    }
    let is_misleading = |r: &AmplificationRecord| misleading_posts.contains(&r.post_id);

    let mut scores: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        if setup == TakedownSetup::Heuristic || is_misleading(r) {
            *scores.entry(&r.account_id).or_default() += r.action_count;
        }
    }
    let mut ranking: Vec<(String, u64)> = scores.into_iter().map(|(a, s)| (a.to_owned(), s)).collect();
    // The map iterates in id order and the sort is stable.
    ranking.sort_by_key(|r| std::cmp::Reverse(r.1));

    let misleading: Vec<&AmplificationRecord> = records.iter().filter(|r| is_misleading(r)).collect();
    let total: u64 = misleading.iter().map(|r| r.action_count).sum();
    let mut amplifiers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &misleading {
        amplifiers.entry(&r.post_id).or_default().push(&r.account_id);
    }

    let points = k_range
        .iter()
        .map(|&k| {
            let removed_accounts = k.min(ranking.len());
            let removed: BTreeSet<&str> =
                ranking[..removed_accounts].iter().map(|(a, _)| a.as_str()).collect();
            let removed_actions: u64 = misleading
                .iter()
                .filter(|r| removed.contains(r.account_id.as_str()))
                .map(|r| r.action_count)
                .sum();
            let fully_suppressed = amplifiers
                .values()
                .filter(|accts| accts.iter().all(|a| removed.contains(a)))
                .count();
            TakedownPoint {
                k,
                removed_accounts,
                clamped: k > ranking.len(),
                removed_actions,
                removed_action_pct: if total == 0 {
                    0.0
                } else {
                    100.0 * removed_actions as f64 / total as f64
                },
                fully_suppressed,
            }
        })
        .collect();

    Ok(TakedownCurve {
        setup,
        ranking,
        total_misleading_actions: total,
        amplified_misleading_posts: amplifiers.len(),
        points,
    })
}

pub fn write_takedown_csv(path: &Path, curves: &[TakedownCurve]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["setup", "k", "removed_accounts", "removed_actions", "removed_pct", "suppressed"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.setup.as_str().to_owned(),
                p.k.to_string(),
                p.removed_accounts.to_string(),
                p.removed_actions.to_string(),
                format!("{:.4}", p.removed_action_pct),
                p.fully_suppressed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentIntegrity {
    pub component_id: usize,
    pub high_retweet_posts: usize,
    pub misleading_posts: usize,
    /// Misleading retweet actions by the component's accounts.
    pub misleading_actions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub min_amplifiers: usize,
    pub rows: Vec<ComponentIntegrity>,
    pub total_high_retweet_posts: usize,
    pub total_misleading_posts: usize,
    pub components_with_misleading: usize,
}

impl ConcentrationReport {
    pub fn row(&self, component_id: usize) -> Option<&ComponentIntegrity> {
        self.rows.iter().find(|r| r.component_id == component_id)
    }
}

/// Per-component counts of high-retweet posts (retweeted by at least
/// `min_amplifiers` accounts of the component) and of misleading ones among
/// them.
pub fn misleading_concentration_report(
    records: &[AmplificationRecord],
    misleading_posts: &BTreeSet<String>,
    components: &[CoordinationComponent],
    min_amplifiers: usize,
) -> ConcentrationReport {
    let pool = high_retweet_posts(records, min_amplifiers);
    let mut rows: BTreeMap<usize, ComponentIntegrity> = components
        .iter()
        .map(|c| {
            (
                c.component_id,
                ComponentIntegrity {
                    component_id: c.component_id,
                    high_retweet_posts: 0,
                    misleading_posts: 0,
                    misleading_actions: 0,
                },
            )
        })
        .collect();
    for (post, comp) in &pool {
        if let Some(row) = rows.get_mut(comp) {
            row.high_retweet_posts += 1;
            if misleading_posts.contains(post) {
                row.misleading_posts += 1;
            }
        }
    }
    for r in records {
        if pool.contains_key(&r.post_id) && misleading_posts.contains(&r.post_id) {
            if let Some(row) = rows.get_mut(&r.component_id) {
                row.misleading_actions += r.action_count;
            }
        }
    }
    let rows: Vec<ComponentIntegrity> = rows.into_values().collect();
    ConcentrationReport {
        min_amplifiers,
        total_high_retweet_posts: rows.iter().map(|r| r.high_retweet_posts).sum(),
        total_misleading_posts: rows.iter().map(|r| r.misleading_posts).sum(),
        components_with_misleading: rows.iter().filter(|r| r.misleading_posts > 0).count(),
        rows,
    }
}
