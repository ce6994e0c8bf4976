use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{Corpus, PostScores};

/// Per-user mean scores, one value per `(user, metric)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    metric_names: Vec<String>,
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn user_count(&self) -> usize {
        self.rows.len()
    }

    pub fn users_contains(&self, user: &str) -> bool {
        self.rows.contains_key(user)
    }

    pub fn get(&self, user: &str, metric: &str) -> Option<f64> {
        self.rows.get(user)?.get(metric).copied()
    }

    /// Values of `metric` for the given users, skipping users without one.
    pub fn values_for<'a>(
        &self,
        metric: &str,
        users: impl IntoIterator<Item = &'a str>,
    ) -> Vec<f64> {
        users
            .into_iter()
            .filter_map(|u| self.get(u, metric))
            .collect()
    }
}

/// Unweighted mean of each user's scored posts, per metric. Users with no
/// scored posts are absent from the table.
pub fn aggregate_user_scores(corpus: &Corpus, scores: &PostScores) -> Result<ScoreTable> {
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    let mut metrics = BTreeSet::new();
    for (post_id, metric, score) in scores.iter() {
        let post = corpus.get(post_id).ok_or_else(|| {
            Error::InvalidInput(format!("scored post `{post_id}` is not in the corpus"))
        })?;
        let slot = sums
            .entry(post.author_id.clone())
            .or_default()
            .entry(metric.to_owned())
            .or_insert((0.0, 0));
        slot.0 += score;
        slot.1 += 1;
        metrics.insert(metric.to_owned());
    }
    let rows = sums
        .into_iter()
        .map(|(user, per_metric)| {
            let means = per_metric
                .into_iter()
                .map(|(m, (sum, n))| (m, sum / n as f64))
                .collect();
            (user, means)
        })
        .collect();
    Ok(ScoreTable {
        metric_names: metrics.into_iter().collect(),
        rows,
    })
}
