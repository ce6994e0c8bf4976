//! Statistical characterization of coordination components.

mod bonferroni;
mod compare;
mod kl;
mod kmeans;
mod log_odds;
mod mann_whitney;
mod rank;
mod scores;
mod spearman;

pub use bonferroni::{layered_bonferroni, SignificanceTier, TierThresholds};
pub use compare::{
    compare_components, CompareOptions, ComparisonTable, ComponentRow, MarkerRule, TestResult,
};
pub use kl::{cluster_counts, kl_profile, ClusterProfile, DEFAULT_KL_EPSILON};
pub use kmeans::{kmeans, KMeansModel, KMeansOptions};
pub use log_odds::{
    default_prior_strength, log_odds_terms, log_odds_terms_with_prior, term_counts,
    LogOddsResult, TermCounts, TermScore,
};
pub use mann_whitney::{
    exact_upper_tail, mann_whitney_one_sided, normal_upper_tail, rank_biserial, Alternative,
    MannWhitney, MannWhitneyOptions, PMethod,
};
pub use rank::{median, midranks, tie_sizes};
pub use scores::{aggregate_user_scores, ScoreTable};
pub use spearman::spearman;
