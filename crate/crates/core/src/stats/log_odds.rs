//! Weighted log-odds ratios with an informative Dirichlet prior, for finding
//! the terms that distinguish a component's posts from a background corpus.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Tokenizer;

pub type TermCounts = BTreeMap<String, u64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermScore {
    pub term: String,
    pub delta: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LogOddsResult {
    /// Sorted by descending z, ties by term.
    pub ranked: Vec<TermScore>,
    /// Terms with zero prior mass and no background occurrences, or terms
    /// making up an entire table.
    pub excluded: Vec<String>,
}

/// Default total prior mass: 1% of the background vocabulary size.
pub fn default_prior_strength(background: &TermCounts) -> f64 {
    0.01 * background.len() as f64
}

/// Log-odds z-scores of `component` against `background`, with the prior
/// proportional to background frequencies and total mass `prior_strength`.
pub fn log_odds_terms(
    component: &TermCounts,
    background: &TermCounts,
    prior_strength: f64,
) -> Result<LogOddsResult> {
    log_odds_terms_with_prior(component, background, background, prior_strength)
}

/// As [`log_odds_terms`], with the prior shape taken from `prior` instead of
/// the background. With a fixed prior, swapping the two corpora negates
/// every delta.
pub fn log_odds_terms_with_prior(
    component: &TermCounts,
    background: &TermCounts,
    prior: &TermCounts,
    prior_strength: f64,
) -> Result<LogOddsResult> {
    let n: u64 = component.values().sum();
    let n_bg: u64 = background.values().sum();
    let n_prior: u64 = prior.values().sum();
    if n == 0 || n_bg == 0 {
        return Err(Error::InvalidInput("log-odds needs two non-empty count tables".into()));
    }
    if prior_strength.is_nan() || prior_strength < 0.0 {
        return Err(Error::InvalidInput(format!("prior strength must be ≥ 0, got {prior_strength}")));
    }
    let (n, n_bg, a0) = (n as f64, n_bg as f64, prior_strength);

    let vocab: BTreeSet<&String> = component.keys().chain(background.keys()).collect();
    let mut result = LogOddsResult::default();
    for term in vocab {
        let y = component.get(term).copied().unwrap_or(0) as f64;
        let y_bg = background.get(term).copied().unwrap_or(0) as f64;
        let alpha = if n_prior == 0 {
            0.0
        } else {
            a0 * prior.get(term).copied().unwrap_or(0) as f64 / n_prior as f64
        };
        if y + alpha <= 0.0 || y_bg + alpha <= 0.0 {
            result.excluded.push(term.clone());
            continue;
        }
        // A term holding all of both the counts and the prior mass has no
        // complement to compare against.
        if n + a0 - y - alpha <= 0.0 || n_bg + a0 - y_bg - alpha <= 0.0 {
            result.excluded.push(term.clone());
            continue;
        }
        let odds = |count: f64, total: f64| ((count + alpha) / (total + a0 - count - alpha)).ln();
        let delta = odds(y, n) - odds(y_bg, n_bg);
        let var = 1.0 / (y + alpha) + 1.0 / (y_bg + alpha);
        result.ranked.push(TermScore {
            term: term.clone(),
            delta,
            z: delta / var.sqrt(),
        });
    }
    result
        .ranked
        .sort_by(|a, b| b.z.total_cmp(&a.z).then_with(|| a.term.cmp(&b.term)));
    Ok(result)
}

/// Token counts over a set of texts.
pub fn term_counts<'a>(texts: impl IntoIterator<Item = &'a str>, tokenizer: &Tokenizer) -> TermCounts {
    let mut counts = TermCounts::new();
    for text in texts {
        for tok in tokenizer.tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    counts
}
