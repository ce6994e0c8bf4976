//! Pipeline configuration, read from a sectioned TOML file.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::indicators::{FilterThresholds, IndicatorKind};
use crate::ingest::{CorpusFormat, CsvColumns, NormalizerKind, DEFAULT_STRIP_PARAMS};
use crate::similarity::{IdfVariant, PruneMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub corpus: PathBuf,
    pub format: CorpusFormat,
    pub csv_columns: CsvColumns,
    pub image_embeddings: Option<PathBuf>,
    pub post_scores: Option<PathBuf>,
    pub claim_labels: Option<PathBuf>,
    /// Hand-labeled image pairs for the dedup precision curve.
    pub labeled_pairs: Option<PathBuf>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("posts.jsonl"),
            format: CorpusFormat::Jsonl,
            csv_columns: CsvColumns::default(),
            image_embeddings: None,
            post_scores: None,
            claim_labels: None,
            labeled_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorConfig {
    pub enabled: Vec<IndicatorKind>,
    pub min_users_per_indicator: usize,
    pub min_indicators_per_user: usize,
    /// Repeat the two filter passes until nothing changes.
    pub filter_to_fixpoint: bool,
    pub normalizer: NormalizerKind,
    pub stopwords: Option<PathBuf>,
    pub min_token_chars: usize,
    pub strip_url_params: Vec<String>,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            enabled: IndicatorKind::ALL.to_vec(),
            min_users_per_indicator: 5,
            min_indicators_per_user: 5,
            filter_to_fixpoint: false,
            normalizer: NormalizerKind::default(),
            stopwords: None,
            min_token_chars: 3,
            strip_url_params: DEFAULT_STRIP_PARAMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl IndicatorConfig {
    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            min_users_per_indicator: self.min_users_per_indicator,
            min_indicators_per_user: self.min_indicators_per_user,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    /// Euclidean distance below which two images are the same.
    pub image_threshold: f64,
    /// Thresholds at which to evaluate labeled pairs.
    pub precision_thresholds: Vec<f64>,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            image_threshold: 10.0,
            precision_thresholds: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub idf: IdfVariant,
    pub prune_fraction: f64,
    pub prune_mode: PruneMode,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            idf: IdfVariant::default(),
            prune_fraction: 1e-5,
            prune_mode: PruneMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentConfig {
    pub min_component_size: usize,
    /// Retweeted accounts below this within-component share fold into "Other".
    pub top_retweeted_min_share: f64,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            min_component_size: 6,
            top_retweeted_min_share: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizationConfig {
    pub toxicity_metrics: Vec<String>,
    pub toxicity_focus: String,
    pub emotion_metrics: Vec<String>,
    pub emotion_focus: String,
    pub exact_cutoff: usize,
    /// Total log-odds prior mass; defaults to 1% of the background vocabulary.
    pub log_odds_prior_strength: Option<f64>,
    pub log_odds_top: usize,
    pub kmeans_k: usize,
    pub kmeans_seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kl_epsilon: f64,
    pub kl_top_clusters: usize,
}

impl Default for CharacterizationConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            toxicity_metrics: s(&[
                "insult",
                "threat",
                "severe_toxicity",
                "profanity",
                "identity_attack",
                "toxicity",
            ]),
            toxicity_focus: "toxicity".into(),
            emotion_metrics: s(&["anger", "disgust", "joy", "sadness", "surprise", "fear"]),
            emotion_focus: "fear".into(),
            exact_cutoff: 400,
            log_odds_prior_strength: None,
            log_odds_top: 20,
            kmeans_k: 100,
            kmeans_seed: 42,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            kl_epsilon: 1e-9,
            kl_top_clusters: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityConfig {
    /// Distinct amplifiers within a component that make a post high-retweet.
    pub min_amplifiers: usize,
    pub n_draws: usize,
    pub permutation_seed: u64,
    /// Largest k in the takedown curves; curves cover 0..=k_max.
    pub takedown_k_max: usize,
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        Self {
            min_amplifiers: 5,
            n_draws: 100_000,
            permutation_seed: 42,
            takedown_k_max: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Worker threads; unset uses all cores. Outputs do not depend on it.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub indicators: IndicatorConfig,
    pub dedup: DedupConfig,
    pub similarity: SimilarityConfig,
    pub components: ComponentConfig,
    pub characterization: CharacterizationConfig,
    pub integrity: IntegrityConfig,
    pub run: RunConfig,
}

fn positive(name: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive")))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&raw)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.corpus);
        for p in [
            &mut self.input.image_embeddings,
            &mut self.input.post_scores,
            &mut self.input.claim_labels,
            &mut self.input.labeled_pairs,
            &mut self.indicators.stopwords,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.run.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let ind = &self.indicators;
        positive("min_users_per_indicator", ind.min_users_per_indicator > 0)?;
        positive("min_indicators_per_user", ind.min_indicators_per_user > 0)?;
        positive("min_token_chars", ind.min_token_chars > 0)?;
        if ind.enabled.is_empty() {
            return Err(Error::Config("no indicators enabled".into()));
        }
        positive("image_threshold", self.dedup.image_threshold > 0.0)?;
        let f = self.similarity.prune_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("`prune_fraction` must lie in (0, 1], got {f}")));
        }
        positive("min_component_size", self.components.min_component_size > 0)?;
        let share = self.components.top_retweeted_min_share;
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::Config(format!(
                "`top_retweeted_min_share` must lie in [0, 1], got {share}"
            )));
        }
        let ch = &self.characterization;
        positive("kmeans_k", ch.kmeans_k > 0)?;
        positive("kmeans_max_iter", ch.kmeans_max_iter > 0)?;
        positive("kmeans_tol", ch.kmeans_tol > 0.0)?;
        positive("kl_epsilon", ch.kl_epsilon > 0.0)?;
        if let Some(s) = ch.log_odds_prior_strength {
            positive("log_odds_prior_strength", s > 0.0)?;
        }
        for (focus, metrics, name) in [
            (&ch.toxicity_focus, &ch.toxicity_metrics, "toxicity_focus"),
            (&ch.emotion_focus, &ch.emotion_metrics, "emotion_focus"),
        ] {
            if !metrics.is_empty() && !metrics.contains(focus) {
                return Err(Error::Config(format!("`{name}` = `{focus}` is not among its metrics")));
            }
        }
        positive("min_amplifiers", self.integrity.min_amplifiers > 0)?;
        positive("n_draws", self.integrity.n_draws > 0)?;
        if self.run.workers == Some(0) {
            return Err(Error::Config("`workers` must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }
}
