//! Stage-by-stage orchestration of a full run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::config::PipelineConfig;
use crate::dedup::{dedup_images, precision_curve, read_labeled_pairs, ImageDedupMap, PrecisionPoint};
use crate::error::{Error, Result};
use crate::indicators::{
    bipartite_summary, build_bipartite, filter_bipartite, filter_bipartite_fixpoint,
    BipartiteGraph, BipartiteSummary, IndicatorKind, IndicatorSources,
};
use crate::ingest::{
    default_stopwords, load_corpus, load_stopwords, read_claim_labels, ClaimLabel, Corpus,
    EmbeddingTable, LoadReport, PostScores, Tokenizer, UrlCleaner,
};
use crate::integrity::{
    amplification_records, high_retweet_posts, misleading_concentration_report,
    permutation_concentration_test, takedown_simulation, AmplificationRecord, ConcentrationReport,
    PermutationConfig, PermutationResult, TakedownCurve, TakedownSetup,
};
use crate::network::{components, membership, merge_networks, CoordinationComponent, MergedNetwork};
use crate::report;
use crate::similarity::{project_and_prune, PruneOutcome};
use crate::stats::{
    aggregate_user_scores, cluster_counts, compare_components, default_prior_strength, kl_profile,
    kmeans, log_odds_terms, spearman, term_counts, ClusterProfile, CompareOptions,
    ComparisonTable, KMeansModel, KMeansOptions, MannWhitneyOptions, MarkerRule, ScoreTable,
    TermScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Dedup,
    Indicators,
    Project,
    Merge,
    Components,
    Characterize,
    Integrity,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Dedup,
        Stage::Indicators,
        Stage::Project,
        Stage::Merge,
        Stage::Components,
        Stage::Characterize,
        Stage::Integrity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Dedup => "dedup",
            Stage::Indicators => "indicators",
            Stage::Project => "project",
            Stage::Merge => "merge",
            Stage::Components => "components",
            Stage::Characterize => "characterize",
            Stage::Integrity => "integrity",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    #[serde(flatten)]
    pub status: StageStatus,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component_id: usize,
    pub size: usize,
    pub dominant_kind: IndicatorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub components: Vec<ComponentSummary>,
    pub warnings: Vec<String>,
    /// SHA-256 of every output file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

/// Characterization results for one run.
#[derive(Debug, Clone, Default)]
pub struct Characterization {
    /// Top distinguishing terms per component.
    pub log_odds: BTreeMap<usize, Vec<TermScore>>,
    pub scores: Option<ScoreTable>,
    pub toxicity: Option<ComparisonTable>,
    pub emotions: Option<ComparisonTable>,
    pub kmeans: Option<KMeansModel>,
    pub image_profiles: Vec<ClusterProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub r_s: Option<f64>,
    /// Why `r_s` is missing, if it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct IntegrityResults {
    pub records: Vec<AmplificationRecord>,
    /// High-retweet posts and their components.
    pub pool: BTreeMap<String, usize>,
    pub misleading: BTreeSet<String>,
    pub concentration: ConcentrationReport,
    pub permutation: Option<PermutationResult>,
    pub takedown: Vec<TakedownCurve>,
    pub correlations: Vec<CorrelationEntry>,
}

/// Everything a run has computed so far.
#[derive(Debug, Default)]
pub struct RunState {
    pub corpus: Option<Corpus>,
    pub load_report: Option<LoadReport>,
    pub embeddings: Option<EmbeddingTable>,
    pub dedup: Option<ImageDedupMap>,
    pub precision: Option<Vec<PrecisionPoint>>,
    pub raw_summaries: Vec<BipartiteSummary>,
    pub graphs: Vec<BipartiteGraph>,
    /// Unpruned edge count of each projected network, aligned with `graphs`.
    pub projected_edges: Vec<usize>,
    pub pruned: Option<PruneOutcome>,
    pub merged: Option<MergedNetwork>,
    pub components: Vec<CoordinationComponent>,
    pub characterization: Option<Characterization>,
    pub integrity: Option<IntegrityResults>,
    pub warnings: Vec<String>,
}

impl RunState {
    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    fn corpus(&self) -> &Corpus {
        self.corpus.as_ref().expect("ingest runs first")
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    tokenizer: Tokenizer,
    url_cleaner: UrlCleaner,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let ind = &config.indicators;
        let stopwords = match &ind.stopwords {
            Some(p) => load_stopwords(p)?,
            None => default_stopwords(),
        };
        let tokenizer = Tokenizer::new(ind.normalizer.build(), stopwords).with_min_chars(ind.min_token_chars);
        let url_cleaner = UrlCleaner {
            strip_params: ind.strip_url_params.clone(),
        };
        Ok(Self {
            config,
            tokenizer,
            url_cleaner,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Runs one stage, returning `Some(reason)` when it was skipped.
    pub fn run_stage(&self, stage: Stage, st: &mut RunState) -> Result<Option<String>> {
        match stage {
            Stage::Ingest => self.ingest(st),
            Stage::Dedup => self.dedup(st),
            Stage::Indicators => self.indicators(st),
            Stage::Project => self.project(st),
            Stage::Merge => self.merge(st),
            Stage::Components => self.components(st),
            Stage::Characterize => self.characterize(st),
            Stage::Integrity => self.integrity(st),
        }
    }

    fn ingest(&self, st: &mut RunState) -> Result<Option<String>> {
        let input = &self.config.input;
        let (corpus, report) = load_corpus(&input.corpus, input.format, &input.csv_columns)?;
        info!(posts = corpus.len(), users = corpus.user_count(), malformed = report.malformed.len(), "corpus loaded");
        if !report.malformed.is_empty() {
            st.warn(format!("{} malformed records skipped", report.malformed.len()));
        }
        st.corpus = Some(corpus);
        st.load_report = Some(report);
        Ok(None)
    }

    fn dedup(&self, st: &mut RunState) -> Result<Option<String>> {
        if let Some(path) = &self.config.input.labeled_pairs {
            let pairs = read_labeled_pairs(path)?;
            st.precision = Some(precision_curve(&pairs, &self.config.dedup.precision_thresholds));
        }
        let Some(path) = &self.config.input.image_embeddings else {
            return Ok(Some("no image embeddings configured".into()));
        };
        let table = EmbeddingTable::read(path)?;
        let map = dedup_images(&table, self.config.dedup.image_threshold)?;
        info!(images = table.len(), groups = map.group_count(), "images deduplicated");
        st.embeddings = Some(table);
        st.dedup = Some(map);
        Ok(None)
    }

    fn indicators(&self, st: &mut RunState) -> Result<Option<String>> {
        let sources = IndicatorSources {
            tokenizer: &self.tokenizer,
            url_cleaner: &self.url_cleaner,
            dedup: st.dedup.as_ref(),
        };
        let thresholds = self.config.indicators.thresholds();
        let mut raw_summaries = Vec::new();
        let mut graphs = Vec::new();
        let mut skipped = Vec::new();
        for &kind in &self.config.indicators.enabled {
            if kind == IndicatorKind::Image && sources.dedup.is_none() {
                skipped.push(kind);
                continue;
            }
            let raw = build_bipartite(st.corpus(), kind, &sources)?;
            raw_summaries.push(bipartite_summary(&raw));
            let g = if self.config.indicators.filter_to_fixpoint {
                filter_bipartite_fixpoint(&raw, thresholds)
            } else {
                filter_bipartite(&raw, thresholds)
            };
            info!(%kind, users = g.users().len(), indicators = g.indicators().len(), "bipartite graph filtered");
            graphs.push(g);
        }
        for kind in skipped {
            st.warn(format!("{kind} indicator skipped: no image embeddings"));
        }
        st.raw_summaries = raw_summaries;
        st.graphs = graphs;
        Ok(None)
    }

    fn project(&self, st: &mut RunState) -> Result<Option<String>> {
        let sim = &self.config.similarity;
        let (pruned, counts) = project_and_prune(&st.graphs, sim.idf, sim.prune_fraction, sim.prune_mode)?;
        st.projected_edges = counts;
        info!(eligible = pruned.eligible_users, k = pruned.k, kept = pruned.kept, "similarity networks pruned");
        st.pruned = Some(pruned);
        Ok(None)
    }

    fn merge(&self, st: &mut RunState) -> Result<Option<String>> {
        let pruned = st.pruned.as_ref().expect("project runs first");
        st.merged = Some(merge_networks(&pruned.networks));
        Ok(None)
    }

    fn components(&self, st: &mut RunState) -> Result<Option<String>> {
        let merged = st.merged.as_ref().expect("merge runs first");
        st.components = components(merged, self.config.components.min_component_size);
        info!(components = st.components.len(), "coordination components found");
        Ok(None)
    }

    fn characterize(&self, st: &mut RunState) -> Result<Option<String>> {
        let ch = &self.config.characterization;
        let corpus = st.corpus();
        let member_of = membership(&st.components);
        let mut out = Characterization::default();
        let mut warnings = Vec::new();

        // Distinguishing terms against the posts of non-coordinated users.
        let token_texts = |keep: &dyn Fn(&str) -> bool| {
            let texts = corpus
                .posts()
                .iter()
                .filter(|p| IndicatorKind::Token.applies_to(p.kind) && keep(&p.author_id))
                .map(|p| p.text.as_str());
            term_counts(texts, &self.tokenizer)
        };
        let background = token_texts(&|a| !member_of.contains_key(a));
        if !st.components.is_empty() && !background.is_empty() {
            let strength = ch
                .log_odds_prior_strength
                .unwrap_or_else(|| default_prior_strength(&background));
            for c in &st.components {
                let counts = token_texts(&|a| c.contains(a));
                if counts.is_empty() {
                    continue;
                }
                let mut result = log_odds_terms(&counts, &background, strength)?;
                result.ranked.truncate(ch.log_odds_top);
                out.log_odds.insert(c.component_id, result.ranked);
            }
        }

        match &self.config.input.post_scores {
            None => warnings.push("toxicity and emotion comparisons skipped: no post scores configured".to_owned()),
            Some(path) => {
                let scores = PostScores::read_csv(path)?;
                let table = aggregate_user_scores(corpus, &scores)?;
                let mw = MannWhitneyOptions {
                    exact_cutoff: ch.exact_cutoff,
                };
                let family = |metrics: &[String], rule: MarkerRule, label: &str, warnings: &mut Vec<String>| {
                    let present: Vec<String> = metrics
                        .iter()
                        .filter(|m| table.metric_names().contains(m))
                        .cloned()
                        .collect();
                    if present.len() < metrics.len() {
                        warnings.push(format!(
                            "{label}: {} of {} configured metrics missing from the scores",
                            metrics.len() - present.len(),
                            metrics.len()
                        ));
                    }
                    if present.is_empty() || st.components.is_empty() {
                        return Ok(None);
                    }
                    compare_components(
                        &table,
                        &st.components,
                        &present,
                        CompareOptions {
                            mann_whitney: mw,
                            marker_rule: rule,
                        },
                    )
                    .map(Some)
                };
                out.toxicity = family(&ch.toxicity_metrics, MarkerRule::Always, "toxicity", &mut warnings)?;
                out.emotions = family(&ch.emotion_metrics, MarkerRule::MedianAbove, "emotions", &mut warnings)?;
                out.scores = Some(table);
            }
        }

        match &st.embeddings {
            None => warnings.push("image clustering skipped: no image embeddings".to_owned()),
            Some(table) => {
                let opts = KMeansOptions {
                    max_iter: ch.kmeans_max_iter,
                    tol: ch.kmeans_tol,
                    workers: None,
                };
                let model = kmeans(table, ch.kmeans_k, ch.kmeans_seed, opts)?;
                let images_of = |keep: &dyn Fn(&str) -> bool| {
                    corpus
                        .posts()
                        .iter()
                        .filter(|p| keep(&p.author_id))
                        .flat_map(|p| p.image_ids.iter().map(String::as_str))
                        .collect::<Vec<_>>()
                };
                let baseline = cluster_counts(&model, images_of(&|a| !member_of.contains_key(a)));
                for c in &st.components {
                    let counts = cluster_counts(&model, images_of(&|a| c.contains(a)));
                    if counts.iter().sum::<u64>() == 0 {
                        continue;
                    }
                    out.image_profiles
                        .push(kl_profile(c.component_id, &counts, &baseline, ch.kl_epsilon)?);
                }
                out.kmeans = Some(model);
            }
        }

        for w in warnings {
            st.warn(w);
        }
        st.characterization = Some(out);
        Ok(None)
    }

    fn integrity(&self, st: &mut RunState) -> Result<Option<String>> {
        let Some(path) = &self.config.input.claim_labels else {
            return Ok(Some("no claim labels configured".into()));
        };
        if st.components.is_empty() {
            return Ok(Some("no coordination components".into()));
        }
        let cfg = &self.config.integrity;
        let labels = read_claim_labels(path)?;
        let member_of = membership(&st.components);
        let records = amplification_records(st.corpus(), &member_of);
        let pool = high_retweet_posts(&records, cfg.min_amplifiers);
        let labeled_misleading: BTreeSet<String> = labels
            .iter()
            .filter(|(_, l)| **l == ClaimLabel::Misleading)
            .map(|(p, _)| p.clone())
            .collect();
        let misleading: BTreeSet<String> = labeled_misleading
            .iter()
            .filter(|p| pool.contains_key(*p))
            .cloned()
            .collect();
        if misleading.len() < labeled_misleading.len() {
            st.warn(format!(
                "{} misleading posts are outside the high-retweet pool and were ignored",
                labeled_misleading.len() - misleading.len()
            ));
        }
        let concentration =
            misleading_concentration_report(&records, &misleading, &st.components, cfg.min_amplifiers);

        let mut permutation = None;
        let mut takedown = Vec::new();
        if misleading.is_empty() {
            st.warn("no misleading posts in the high-retweet pool; permutation and takedown skipped".into());
        } else {
            let perm_cfg = PermutationConfig {
                post_component: pool.clone(),
                n_misleading: misleading.len(),
                n_draws: cfg.n_draws,
                seed: cfg.permutation_seed,
            };
            permutation = Some(permutation_concentration_test(
                &perm_cfg,
                concentration.components_with_misleading,
            )?);
            let pool_records: Vec<AmplificationRecord> = records
                .iter()
                .filter(|r| pool.contains_key(&r.post_id))
                .cloned()
                .collect();
            let ks: Vec<usize> = (0..=cfg.takedown_k_max).collect();
            for setup in [TakedownSetup::KnownMisleading, TakedownSetup::Heuristic] {
                takedown.push(takedown_simulation(&pool_records, &misleading, setup, &ks)?);
            }
        }

        let correlations = self.risk_correlations(st, &concentration);
        st.integrity = Some(IntegrityResults {
            records,
            pool,
            misleading,
            concentration,
            permutation,
            takedown,
            correlations,
        });
        Ok(None)
    }

    /// Spearman correlations across components between misleading-post
    /// counts and the focus-metric effect sizes.
    fn risk_correlations(&self, st: &RunState, conc: &ConcentrationReport) -> Vec<CorrelationEntry> {
        let ch = &self.config.characterization;
        let effect = |table: Option<&ComparisonTable>, metric: &str| -> BTreeMap<usize, f64> {
            table
                .map(|t| {
                    t.rows
                        .iter()
                        .filter_map(|r| r.tests.get(metric).map(|x| (r.component_id, x.r_rb)))
                        .collect()
                })
                .unwrap_or_default()
        };
        let characterization = st.characterization.as_ref();
        let misleading: BTreeMap<usize, f64> = conc
            .rows
            .iter()
            .map(|r| (r.component_id, r.misleading_posts as f64))
            .collect();
        let tox = effect(characterization.and_then(|c| c.toxicity.as_ref()), &ch.toxicity_focus);
        let fear = effect(characterization.and_then(|c| c.emotions.as_ref()), &ch.emotion_focus);
        let series = [
            ("misleading", &misleading),
            (ch.toxicity_focus.as_str(), &tox),
            (ch.emotion_focus.as_str(), &fear),
        ];
        let mut out = Vec::new();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let (xn, xs) = series[i];
            let (yn, ys) = series[j];
            let (x, y): (Vec<f64>, Vec<f64>) = xs
                .iter()
                .filter_map(|(c, &v)| ys.get(c).map(|&w| (v, w)))
                .unzip();
            let (r_s, note) = match spearman(&x, &y) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(CorrelationEntry {
                x: xn.to_owned(),
                y: yn.to_owned(),
                n: x.len(),
                r_s,
                note,
            });
        }
        out
    }
}

/// Options for [`run_pipeline`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Last stage to execute; `None` runs everything.
    pub stop_after: Option<Stage>,
}

/// Result of a run: the manifest plus the in-memory state.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub state: RunState,
    /// Set when a stage failed; the manifest on disk is partial.
    pub error: Option<Error>,
}

/// Executes the configured pipeline, writing stage outputs and the manifest
/// under the output directory.
pub fn run_pipeline(config: &PipelineConfig, opts: RunOptions) -> Result<RunOutcome> {
    with_workers(config.run.workers, || run_inner(config, opts))
}

/// Runs `f` inside a dedicated thread pool of `workers` threads, or on the
/// global pool when `workers` is `None`.
pub fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn run_inner(config: &PipelineConfig, opts: RunOptions) -> Result<RunOutcome> {
    let pipeline = Pipeline::new(config.clone())?;
    let out_dir = config.run.output_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut state = RunState::default();
    let mut stages = Vec::new();
    let mut error = None;
    for stage in Stage::ALL {
        if opts.stop_after.is_some_and(|last| stage > last) {
            break;
        }
        let start = Instant::now();
        let result = pipeline
            .run_stage(stage, &mut state)
            .and_then(|skip| report::write_stage(stage, &state, &pipeline, &out_dir).map(|()| skip));
        let seconds = start.elapsed().as_secs_f64();
        let status = match result {
            Ok(None) => StageStatus::Completed,
            Ok(Some(reason)) => {
                state.warn(format!("{stage} skipped: {reason}"));
                StageStatus::Skipped { reason }
            }
            Err(e) => {
                let status = StageStatus::Failed { error: e.to_string() };
                error = Some(e);
                stages.push(StageRecord { stage, status, seconds });
                break;
            }
        };
        info!(%stage, seconds, "stage finished");
        stages.push(StageRecord { stage, status, seconds });
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: config.hash()?,
        config: config.clone(),
        stages,
        components: state
            .components
            .iter()
            .map(|c| ComponentSummary {
                component_id: c.component_id,
                size: c.size(),
                dominant_kind: c.dominant_kind,
            })
            .collect(),
        warnings: state.warnings.clone(),
        outputs: checksum_outputs(&out_dir)?,
        complete: error.is_none(),
    };
    let path = out_dir.join(RunManifest::FILE_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome {
        manifest,
        state,
        error,
    })
}

/// SHA-256 of every file under `dir` except the manifest, keyed by
/// `/`-separated relative path.
pub fn checksum_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .expect("walk stays under the root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == RunManifest::FILE_NAME {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}
