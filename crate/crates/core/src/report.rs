//! Output files for each pipeline stage.
//!
//! Layout under the output directory:
//!
//! ```text
//! ingest/load_report.json
//! dedup/image_dedup.csv
//! graphs/bipartite_<kind>.tsv
//! networks/similarity_pruned.tsv, networks/prune.json, networks/merged.csv
//! components/membership.csv
//! characterize/kmeans_assignments.csv
//! integrity/amplification.csv, integrity/high_retweet_posts.csv
//! report/*.csv, report/*.json
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::indicators::{GraphHeader, IndicatorKind};
use crate::ingest::{ensure_parent, PostKind};
use crate::integrity::{write_pool_csv, write_records_csv, write_takedown_csv};
use crate::network::{top_retweeted_with, tweet_type_mix, write_membership_csv, RetweetCounts};
use crate::pipeline::{Pipeline, RunManifest, RunOptions, RunOutcome, RunState, Stage};
use crate::similarity::write_networks_tsv;
use crate::stats::{ComparisonTable, SignificanceTier};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    ensure_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Six-decimal rendering that never prints a negative zero.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn pct(part: usize, whole: usize) -> String {
    if whole == 0 {
        "0.0".into()
    } else {
        format!("{:.1}", 100.0 * part as f64 / whole as f64)
    }
}

/// Writes the outputs a completed (or skipped) stage makes available.
pub fn write_stage(stage: Stage, st: &RunState, pipeline: &Pipeline, out: &Path) -> Result<()> {
    match stage {
        Stage::Ingest => write_ingest(st, out),
        Stage::Dedup => write_dedup(st, out),
        Stage::Indicators => write_indicators(st, pipeline, out),
        Stage::Project => write_project(st, out),
        Stage::Merge => match &st.merged {
            Some(m) => m.write_csv(&out.join("networks/merged.csv")),
            None => Ok(()),
        },
        Stage::Components => write_components(st, pipeline, out),
        Stage::Characterize => write_characterization(st, pipeline, out),
        Stage::Integrity => write_integrity(st, pipeline, out),
    }
}

fn write_ingest(st: &RunState, out: &Path) -> Result<()> {
    let (Some(corpus), Some(report)) = (&st.corpus, &st.load_report) else {
        return Ok(());
    };
    write_json(&out.join("ingest/load_report.json"), report)?;

    let path = out.join("report/dataset_summary.csv");
    let mut w = writer(&path)?;
    w.write_record(["description", "count", "percentage"])?;
    let counts = corpus.kind_counts();
    let total = corpus.len();
    for (kind, label) in [
        (PostKind::Original, "Original tweet"),
        (PostKind::Retweet, "Retweet"),
        (PostKind::Quote, "Quote"),
        (PostKind::Reply, "Replies"),
    ] {
        let n = counts[kind.index()];
        w.write_record([label.to_owned(), n.to_string(), pct(n, total)])?;
    }
    w.write_record(["Total tweets".to_owned(), total.to_string(), pct(total, total)])?;
    w.write_record(["Users".to_owned(), corpus.user_count().to_string(), "--".into()])?;
    let images: BTreeSet<&str> = corpus
        .posts()
        .iter()
        .flat_map(|p| p.image_ids.iter().map(String::as_str))
        .collect();
    w.write_record(["Images".to_owned(), images.len().to_string(), "--".into()])?;
    let originals = counts[PostKind::Original.index()];
    let with_images = corpus
        .posts()
        .iter()
        .filter(|p| p.kind == PostKind::Original && !p.image_ids.is_empty())
        .count();
    w.write_record([
        "Original tweets with images".to_owned(),
        with_images.to_string(),
        pct(with_images, originals),
    ])?;
    finish(w, &path)
}

fn write_dedup(st: &RunState, out: &Path) -> Result<()> {
    if let Some(map) = &st.dedup {
        map.write_csv(&out.join("dedup/image_dedup.csv"))?;
    }
    if let Some(curve) = &st.precision {
        let path = out.join("report/dedup_precision.csv");
        let mut w = writer(&path)?;
        w.write_record(["threshold", "pairs_below", "precision", "recall_dup", "recall_dup_or_near"])?;
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.4}"));
        for p in curve {
            w.write_record([
                p.threshold.to_string(),
                p.pairs_below.to_string(),
                opt(p.precision),
                opt(p.recall_dup),
                opt(p.recall_dup_or_near),
            ])?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

fn write_indicators(st: &RunState, pipeline: &Pipeline, out: &Path) -> Result<()> {
    let filter = Some(pipeline.config().indicators.thresholds());
    for g in &st.graphs {
        let path = out.join(format!("graphs/bipartite_{}.tsv", g.kind()));
        g.write_tsv(&path, &GraphHeader { kind: g.kind(), filter })?;
    }
    let path = out.join("report/bipartite_summary.csv");
    let mut w = writer(&path)?;
    w.write_record(["indicator", "stage", "users", "indicators", "edges", "i_per_u", "u_per_i", "avg_weight"])?;
    let filtered: Vec<_> = st.graphs.iter().map(crate::indicators::bipartite_summary).collect();
    for (label, rows) in [("raw", &st.raw_summaries), ("filtered", &filtered)] {
        for s in rows {
            w.write_record([
                s.kind.to_string(),
                label.to_owned(),
                s.users.to_string(),
                s.indicators.to_string(),
                s.edges.to_string(),
                format!("{:.2}", s.ind_per_user),
                format!("{:.2}", s.user_per_ind),
                format!("{:.2}", s.avg_weight),
            ])?;
        }
    }
    finish(w, &path)
}

#[derive(Serialize)]
struct NetworkPrune {
    kind: IndicatorKind,
    projected_edges: usize,
    kept_edges: usize,
}

#[derive(Serialize)]
struct PruneSummary {
    eligible_users: usize,
    k: u64,
    cutoff: Option<f64>,
    kept: usize,
    per_network: Vec<NetworkPrune>,
}

fn write_project(st: &RunState, out: &Path) -> Result<()> {
    let Some(pruned) = &st.pruned else {
        return Ok(());
    };
    write_networks_tsv(&out.join("networks/similarity_pruned.tsv"), &pruned.networks)?;
    let summary = PruneSummary {
        eligible_users: pruned.eligible_users,
        k: pruned.k,
        cutoff: pruned.cutoff,
        kept: pruned.kept,
        per_network: st
            .projected_edges
            .iter()
            .zip(&pruned.networks)
            .map(|(&projected_edges, kept)| NetworkPrune {
                kind: kept.kind,
                projected_edges,
                kept_edges: kept.edges.len(),
            })
            .collect(),
    };
    write_json(&out.join("networks/prune.json"), &summary)
}

fn write_components(st: &RunState, pipeline: &Pipeline, out: &Path) -> Result<()> {
    let Some(corpus) = &st.corpus else {
        return Ok(());
    };
    write_membership_csv(&out.join("components/membership.csv"), &st.components)?;

    let path = out.join("report/components.csv");
    let mut w = writer(&path)?;
    let mut header = vec!["component_id".to_owned(), "size".into(), "edges".into(), "dominant".into()];
    header.extend(IndicatorKind::ALL.iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for c in &st.components {
        let mut row = vec![
            c.component_id.to_string(),
            c.size().to_string(),
            c.edge_provenance.len().to_string(),
            c.dominant_kind.to_string(),
        ];
        for k in IndicatorKind::ALL {
            let n = c.edge_provenance.values().filter(|p| p.contains(&k)).count();
            row.push(n.to_string());
        }
        w.write_record(&row)?;
    }
    finish(w, &path)?;

    let path = out.join("report/tweet_type_mix.csv");
    let mut w = writer(&path)?;
    w.write_record(["component_id", "posts", "original", "retweet", "quote", "reply"])?;
    for c in &st.components {
        if let Some(mix) = tweet_type_mix(c, corpus) {
            let mut row = vec![c.component_id.to_string(), mix.posts.to_string()];
            row.extend(PostKind::ALL.iter().map(|&k| format!("{:.4}", mix.share(k))));
            w.write_record(&row)?;
        }
    }
    finish(w, &path)?;

    let counts = RetweetCounts::from_corpus(corpus);
    let min_share = pipeline.config().components.top_retweeted_min_share;
    let path = out.join("report/top_retweeted.csv");
    let mut w = writer(&path)?;
    w.write_record(["component_id", "account", "retweets", "share_within_component", "coordination_reliance"])?;
    for c in &st.components {
        for t in top_retweeted_with(c, corpus, &counts, min_share) {
            w.write_record([
                c.component_id.to_string(),
                t.label().to_owned(),
                t.retweets.to_string(),
                format!("{:.4}", t.share_within_component),
                t.coordination_reliance.map_or_else(String::new, |r| format!("{r:.4}")),
            ])?;
        }
    }
    finish(w, &path)
}

/// Median rendered with its significance marker.
fn marked(median: Option<f64>, tier: Option<SignificanceTier>) -> String {
    match median {
        None => String::new(),
        Some(m) => format!("{m:.3}{}", tier.map_or("", |t| t.marker())),
    }
}

/// Wide table: one row per component plus the baseline row, a marked
/// median per metric, and the focus metric's effect size.
pub fn write_comparison_table(path: &Path, table: &ComparisonTable, focus: &str) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["component".to_owned()];
    header.extend(table.metrics.iter().cloned());
    header.push("effect".into());
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.component_id.to_string()];
        for m in &table.metrics {
            let tier = row.tests.get(m).map(|t| t.significance_tier);
            rec.push(marked(row.medians.get(m).copied().flatten(), tier));
        }
        rec.push(
            row.tests
                .get(focus)
                .map_or_else(String::new, |t| format!("{:+.3}", t.r_rb)),
        );
        w.write_record(&rec)?;
    }
    let mut base = vec!["Non-coordinated".to_owned()];
    for m in &table.metrics {
        base.push(marked(table.baseline_medians.get(m).copied().flatten(), None));
    }
    base.push("--".into());
    w.write_record(&base)?;
    finish(w, path)
}

/// Long table: one row per test.
pub fn write_comparison_tests(path: &Path, table: &ComparisonTable) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "component_id", "metric", "n_component", "n_baseline", "median", "u", "p_value", "r_rb",
        "method", "degenerate", "tier", "marker",
    ])?;
    for row in &table.rows {
        for t in row.tests.values() {
            let median = row.medians.get(&t.metric_name).copied().flatten();
            w.write_record([
                t.component_id.to_string(),
                t.metric_name.clone(),
                t.n_component.to_string(),
                t.n_baseline.to_string(),
                median.map_or_else(String::new, |m| m.to_string()),
                t.u_statistic.to_string(),
                format!("{:.6e}", t.p_value),
                fixed6(t.r_rb),
                serde_json::to_value(t.method)?.as_str().unwrap_or_default().to_owned(),
                t.degenerate.to_string(),
                serde_json::to_value(t.significance_tier)?.as_str().unwrap_or_default().to_owned(),
                t.significance_tier.marker().to_owned(),
            ])?;
        }
    }
    finish(w, path)
}

fn write_characterization(st: &RunState, pipeline: &Pipeline, out: &Path) -> Result<()> {
    let Some(ch) = &st.characterization else {
        return Ok(());
    };
    let path = out.join("report/log_odds.csv");
    let mut w = writer(&path)?;
    w.write_record(["component_id", "rank", "term", "delta", "z"])?;
    for (comp, terms) in &ch.log_odds {
        for (i, t) in terms.iter().enumerate() {
            w.write_record([
                comp.to_string(),
                (i + 1).to_string(),
                t.term.clone(),
                fixed6(t.delta),
                fixed6(t.z),
            ])?;
        }
    }
    finish(w, &path)?;

    let cfg = &pipeline.config().characterization;
    for (name, table, focus) in [
        ("toxicity", &ch.toxicity, &cfg.toxicity_focus),
        ("emotions", &ch.emotions, &cfg.emotion_focus),
    ] {
        if let Some(t) = table {
            write_comparison_table(&out.join(format!("report/{name}.csv")), t, focus)?;
            write_comparison_tests(&out.join(format!("report/{name}_tests.csv")), t)?;
            write_json(&out.join(format!("report/{name}.json")), t)?;
        }
    }

    if let Some(model) = &ch.kmeans {
        let path = out.join("characterize/kmeans_assignments.csv");
        let mut w = writer(&path)?;
        w.write_record(["image_id", "cluster"])?;
        for (id, c) in model.ids.iter().zip(&model.assignment) {
            w.write_record([id.clone(), c.to_string()])?;
        }
        finish(w, &path)?;

        let path = out.join("report/image_kl.csv");
        let mut w = writer(&path)?;
        w.write_record(["component_id", "kl_total", "rank", "cluster", "contribution", "component_share", "baseline_share"])?;
        for p in &ch.image_profiles {
            for (rank, (cluster, contribution)) in p.top_clusters(cfg.kl_top_clusters).into_iter().enumerate() {
                w.write_record([
                    p.component_id.to_string(),
                    fixed6(p.kl_total),
                    (rank + 1).to_string(),
                    cluster.to_string(),
                    fixed6(contribution),
                    fixed6(p.cluster_distribution[cluster]),
                    fixed6(p.baseline_distribution[cluster]),
                ])?;
            }
        }
        finish(w, &path)?;
        write_json(&out.join("report/image_kl.json"), &ch.image_profiles)?;
    }
    Ok(())
}

fn write_integrity(st: &RunState, pipeline: &Pipeline, out: &Path) -> Result<()> {
    let Some(ig) = &st.integrity else {
        return Ok(());
    };
    write_records_csv(&out.join("integrity/amplification.csv"), &ig.records)?;
    write_pool_csv(&out.join("integrity/high_retweet_posts.csv"), &ig.pool, &ig.misleading)?;

    // Risk synthesis: misleading counts beside the toxicity and emotion
    // signals of each component.
    let cfg = &pipeline.config().characterization;
    let ch = st.characterization.as_ref();
    let tox = ch.and_then(|c| c.toxicity.as_ref());
    let emo = ch.and_then(|c| c.emotions.as_ref());
    let path = out.join("report/integrity.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "component",
        "high_retweet_posts",
        "misleading",
        "misleading_actions",
        "toxicity_signals",
        "toxicity_effect",
        "emotion_signals",
        "emotion_effect",
    ])?;
    for r in &ig.concentration.rows {
        let tox_row = tox.and_then(|t| t.row(r.component_id));
        let emo_row = emo.and_then(|t| t.row(r.component_id));
        let effect = |row: Option<&crate::stats::ComponentRow>, m: &str| {
            row.and_then(|x| x.tests.get(m))
                .map_or_else(String::new, |t| format!("{:+.3}", t.r_rb))
        };
        let tox_signals = tox_row.map_or_else(String::new, |row| {
            format!("{}/{}", row.significant_metrics().len(), row.tests.len())
        });
        let emo_signals = emo_row.map_or_else(String::new, |row| {
            let marked: Vec<String> = row
                .tests
                .values()
                .filter(|t| t.significance_tier != SignificanceTier::None)
                .map(|t| format!("{}{}", t.metric_name, t.significance_tier.marker()))
                .collect();
            if marked.is_empty() {
                "--".into()
            } else {
                marked.join("; ")
            }
        });
        w.write_record([
            r.component_id.to_string(),
            r.high_retweet_posts.to_string(),
            r.misleading_posts.to_string(),
            r.misleading_actions.to_string(),
            tox_signals,
            effect(tox_row, &cfg.toxicity_focus),
            emo_signals,
            effect(emo_row, &cfg.emotion_focus),
        ])?;
    }
    finish(w, &path)?;

    write_json(&out.join("report/concentration.json"), &ig.concentration)?;
    write_json(&out.join("report/correlations.json"), &ig.correlations)?;
    if let Some(p) = &ig.permutation {
        write_json(&out.join("report/permutation.json"), p)?;
    }
    if !ig.takedown.is_empty() {
        write_takedown_csv(&out.join("report/takedown.csv"), &ig.takedown)?;
    }
    Ok(())
}

/// Recomputes every output from the configuration recorded in a manifest,
/// optionally into a different directory.
pub fn emit_report(manifest: &RunManifest, output_dir: Option<&Path>) -> Result<RunOutcome> {
    let mut config = manifest.config.clone();
    if let Some(dir) = output_dir {
        config.run.output_dir = dir.to_path_buf();
    }
    crate::pipeline::run_pipeline(&config, RunOptions::default())
}
