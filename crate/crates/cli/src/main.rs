use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coordnet::config::PipelineConfig;
use coordnet::ingest::NormalizerKind;
use coordnet::integrity::{
    permutation_concentration_test, read_pool_csv, read_records_csv, takedown_simulation,
    write_takedown_csv, PermutationConfig, TakedownSetup,
};
use coordnet::pipeline::{run_pipeline, with_workers, RunManifest, RunOptions, Stage, StageStatus};
use coordnet::report::emit_report;
use coordnet::synth::{generate, write_synth, SynthConfig};
use coordnet::Error;
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "coordnet", version, about = "Coordinated account detection and characterization")]
struct Cli {
    /// Log filter, e.g. `info` or `coordnet=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the corpus.
    Ingest(StageArgs),
    /// Group near-duplicate images.
    Dedup(StageArgs),
    /// Build and filter the user-indicator graphs.
    Indicators(StageArgs),
    /// Project to similarity networks and prune.
    Project(StageArgs),
    /// Merge the pruned networks.
    Merge(StageArgs),
    /// Extract coordination components.
    Components(StageArgs),
    /// Compare components against non-coordinated users.
    Characterize(StageArgs),
    /// Label permutation test over a high-retweet pool.
    Permtest(PermtestArgs),
    /// Top-k amplifier removal curves.
    Takedown(TakedownArgs),
    /// Regenerate every output from a run manifest.
    Report(ReportArgs),
    /// Write a synthetic corpus with planted coordination.
    Synth(SynthArgs),
    /// Run every stage.
    RunAll(StageArgs),
}

/// Overrides for fields of the pipeline config.
#[derive(Args)]
struct StageArgs {
    /// Pipeline config file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    image_embeddings: Option<PathBuf>,
    #[arg(long)]
    post_scores: Option<PathBuf>,
    #[arg(long)]
    claim_labels: Option<PathBuf>,
    #[arg(long)]
    min_users_per_indicator: Option<usize>,
    #[arg(long)]
    min_indicators_per_user: Option<usize>,
    #[arg(long)]
    prune_fraction: Option<f64>,
    #[arg(long)]
    min_component_size: Option<usize>,
    #[arg(long)]
    image_threshold: Option<f64>,
    #[arg(long, value_enum)]
    normalizer: Option<Normalizer>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
    #[arg(long)]
    n_draws: Option<usize>,
    #[arg(long)]
    permutation_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalizer {
    Identity,
    SuffixStrip,
}

impl StageArgs {
    fn load(&self) -> coordnet::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.input.corpus, self.corpus);
        set!(cfg.run.output_dir, self.output_dir);
        if self.workers.is_some() {
            cfg.run.workers = self.workers;
        }
        if self.image_embeddings.is_some() {
            cfg.input.image_embeddings = self.image_embeddings.clone();
        }
        if self.post_scores.is_some() {
            cfg.input.post_scores = self.post_scores.clone();
        }
        if self.claim_labels.is_some() {
            cfg.input.claim_labels = self.claim_labels.clone();
        }
        if self.stopwords.is_some() {
            cfg.indicators.stopwords = self.stopwords.clone();
        }
        set!(cfg.indicators.min_users_per_indicator, self.min_users_per_indicator);
        set!(cfg.indicators.min_indicators_per_user, self.min_indicators_per_user);
        set!(cfg.similarity.prune_fraction, self.prune_fraction);
        set!(cfg.components.min_component_size, self.min_component_size);
        set!(cfg.dedup.image_threshold, self.image_threshold);
        set!(cfg.characterization.kmeans_k, self.kmeans_k);
        set!(cfg.characterization.kmeans_seed, self.kmeans_seed);
        set!(cfg.integrity.n_draws, self.n_draws);
        set!(cfg.integrity.permutation_seed, self.permutation_seed);
        if let Some(n) = self.normalizer {
            cfg.indicators.normalizer = match n {
                Normalizer::Identity => NormalizerKind::Identity,
                Normalizer::SuffixStrip => NormalizerKind::SuffixStrip,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PermtestArgs {
    /// CSV with `post_id,component_id,misleading` columns.
    #[arg(long)]
    pool: PathBuf,
    /// Observed number of components holding misleading posts; defaults to
    /// the count in the pool file.
    #[arg(long)]
    observed: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TakedownArgs {
    /// Amplification records, `account_id,post_id,component_id,action_count`.
    #[arg(long)]
    records: PathBuf,
    /// High-retweet pool, `post_id,component_id,misleading`.
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    setup: SetupArg,
    #[arg(long, default_value_t = 50)]
    k_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetupArg {
    Known,
    Heuristic,
    Both,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest of the run to regenerate.
    #[arg(long)]
    manifest: PathBuf,
    /// Write outputs here instead of the manifest's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    background_users: usize,
    #[arg(long, default_value_t = 19)]
    mean_posts: usize,
    #[arg(long, default_value_t = 10)]
    clique_size: usize,
    #[arg(long, default_value_t = 8)]
    copypasta_size: usize,
}

fn run_stages(args: &StageArgs, stop_after: Option<Stage>) -> coordnet::Result<()> {
    let cfg = args.load()?;
    let outcome = run_pipeline(&cfg, RunOptions { stop_after })?;
    for s in &outcome.manifest.stages {
        if let StageStatus::Skipped { reason } = &s.status {
            info!(stage = %s.stage, %reason, "skipped");
        }
    }
    info!(
        components = outcome.manifest.components.len(),
        output = %cfg.run.output_dir.display(),
        "run finished"
    );
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn permtest(args: &PermtestArgs) -> coordnet::Result<()> {
    let (pool, misleading) = read_pool_csv(&args.pool)?;
    let observed = match args.observed {
        Some(o) => o,
        None => misleading.iter().map(|p| pool[p]).collect::<BTreeSet<_>>().len(),
    };
    let cfg = PermutationConfig {
        post_component: pool,
        n_misleading: misleading.len(),
        n_draws: args.draws,
        seed: args.seed,
    };
    let result = with_workers(args.workers, || permutation_concentration_test(&cfg, observed))?;
    let json = serde_json::to_string_pretty(&result)?;
    emit(args.out.as_deref(), &json)
}

fn emit(out: Option<&Path>, text: &str) -> coordnet::Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn takedown(args: &TakedownArgs) -> coordnet::Result<()> {
    let (pool, misleading) = read_pool_csv(&args.pool)?;
    let records: Vec<_> = read_records_csv(&args.records)?
        .into_iter()
        .filter(|r| pool.contains_key(&r.post_id))
        .collect();
    let setups: &[TakedownSetup] = match args.setup {
        SetupArg::Known => &[TakedownSetup::KnownMisleading],
        SetupArg::Heuristic => &[TakedownSetup::Heuristic],
        SetupArg::Both => &[TakedownSetup::KnownMisleading, TakedownSetup::Heuristic],
    };
    let ks: Vec<usize> = (0..=args.k_max).collect();
    let curves = setups
        .iter()
        .map(|&s| takedown_simulation(&records, &misleading, s, &ks))
        .collect::<coordnet::Result<Vec<_>>>()?;
    for c in &curves {
        if c.points.last().is_some_and(|p| p.clamped) {
            info!(setup = c.setup.as_str(), accounts = c.ranking.len(), "k clamped to the number of ranked accounts");
        }
    }
    write_takedown_csv(&args.out, &curves)
}

fn report(args: &ReportArgs) -> coordnet::Result<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let outcome = emit_report(&manifest, args.output_dir.as_deref())?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn synth(args: &SynthArgs) -> coordnet::Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        background_users: args.background_users,
        mean_posts_per_user: args.mean_posts,
        clique_size: args.clique_size,
        copypasta_size: args.copypasta_size,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg);
    let files = write_synth(&args.out, &corpus)?;
    info!(posts = corpus.posts.len(), config = %files.config.display(), "synthetic corpus written");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    let result = match &cli.command {
        Command::Ingest(a) => run_stages(a, Some(Stage::Ingest)),
        Command::Dedup(a) => run_stages(a, Some(Stage::Dedup)),
        Command::Indicators(a) => run_stages(a, Some(Stage::Indicators)),
        Command::Project(a) => run_stages(a, Some(Stage::Project)),
        Command::Merge(a) => run_stages(a, Some(Stage::Merge)),
        Command::Components(a) => run_stages(a, Some(Stage::Components)),
        Command::Characterize(a) => run_stages(a, Some(Stage::Characterize)),
        Command::RunAll(a) => run_stages(a, None),
        Command::Permtest(a) => permtest(a),
        Command::Takedown(a) => takedown(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
