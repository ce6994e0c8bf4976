//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coordnet::config::PipelineConfig;
use coordnet::dedup::{dedup_images, dedup_images_with};
use coordnet::indicators::{BipartiteGraph, IndicatorKind};
use coordnet::ingest::EmbeddingTable;
use coordnet::integrity::{
    permutation_concentration_test, takedown_simulation, AmplificationRecord, PermutationConfig,
    TakedownSetup,
};
use coordnet::pipeline::{run_pipeline, RunManifest, RunOptions, Stage};
use coordnet::similarity::{project, prune_top_fraction, IdfVariant, PruneMode, SimilarityNetwork};
use coordnet::stats::{
    kl_profile, kmeans, mann_whitney_one_sided, Alternative, KMeansOptions, MannWhitneyOptions,
    SignificanceTier, TierThresholds,
};
use coordnet::synth::{generate, write_synth, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tolerance on the takedown percentages, in percentage points.
const TAKEDOWN_TOL_PP: f64 = 0.05;
const TAKEDOWN_MAX_RUNTIME: Duration = Duration::from_secs(1);
const MWU_TOL: f64 = 1e-12;
const COSINE_TOL: f64 = 1e-12;
const PERMUTATION_TOL: f64 = 0.01;
const KL_SUM_TOL: f64 = 1e-12;
const PIPELINE_MAX_RUNTIME: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("takedown curve exactness", takedown_curve),
        ("bonferroni tiers", bonferroni_tiers),
        ("mann-whitney correctness", mann_whitney),
        ("similarity oracle equivalence", similarity_oracle),
        ("planted recovery", planted_recovery),
        ("permutation calibration", permutation_calibration),
        ("dedup transitivity and monotonicity", dedup_closure),
        ("kl and k-means properties", kl_kmeans),
        ("run determinism", determinism),
        ("desk-scale performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// 1 ------------------------------------------------------------------------

fn takedown_curve() -> Outcome {
    // Misleading-action multiset 8x5, 1x4, 2x3, 20x2, 147x1 over posts M01-M12.
    let mut records = Vec::new();
    let rec = |a: String, p: String| AmplificationRecord {
        account_id: a,
        post_id: p,
        component_id: 1,
        action_count: 1,
    };
    let m = |i: usize| format!("M{i:02}");
    let mut tail = (6..=12).cycle();
    for (group, (accounts, actions)) in [(8, 5), (1, 4), (2, 3), (20, 2), (147, 1)].into_iter().enumerate() {
        for a in 0..accounts {
            for j in 0..actions {
                let post = if actions >= 4 { m(j + 1) } else { m(tail.next().unwrap()) };
                records.push(rec(format!("g{group}_{a:03}"), post));
            }
        }
    }
    let misleading: BTreeSet<String> = (1..=12).map(m).collect();

    // Independent oracle: greedy removal over the sorted action counts.
    let mut counts: Vec<u64> = [(8, 5), (1, 4), (2, 3), (20, 2), (147, 1)]
        .iter()
        .flat_map(|&(n, c)| std::iter::repeat_n(c, n))
        .collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = counts.iter().sum();
    let oracle = |k: usize| 100.0 * counts[..k].iter().sum::<u64>() as f64 / total as f64;

    let started = Instant::now();
    let curve = takedown_simulation(&records, &misleading, TakedownSetup::KnownMisleading, &[9, 30])
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let (p9, p30) = (curve.points[0].removed_action_pct, curve.points[1].removed_action_pct);
    check(curve.total_misleading_actions == total, || format!("total {} != {total}", curve.total_misleading_actions))?;
    check((p9 - oracle(9)).abs() < 1e-9, || format!("k=9 {p9} != oracle {}", oracle(9)))?;
    check((p30 - oracle(30)).abs() < 1e-9, || format!("k=30 {p30} != oracle {}", oracle(30)))?;
    check((p9 - 18.6).abs() <= TAKEDOWN_TOL_PP, || format!("k=9 {p9:.3}% vs 18.6%"))?;
    check((p30 - 37.1).abs() <= TAKEDOWN_TOL_PP, || format!("k=30 {p30:.3}% vs 37.1%"))?;
    check(elapsed < TAKEDOWN_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!("k=9 {p9:.3}%, k=30 {p30:.3}% (tol {TAKEDOWN_TOL_PP}pp), {elapsed:?}"))
}

// 2 ------------------------------------------------------------------------

/// Rounds to three significant figures.
fn round3(x: f64) -> f64 {
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn bonferroni_tiers() -> Outcome {
    let t = TierThresholds::for_tests(66);
    // Four-figure values with their three-figure roundings.
    for (got, four, three, name) in [
        (t.three_star, 1.515e-5, 1.52e-5, "***"),
        (t.two_star, 1.515e-4, 1.52e-4, "**"),
        (t.one_star, 7.576e-4, 7.58e-4, "*"),
    ] {
        check((round3(got) - three).abs() <= 1e-12 * three, || {
            format!("{name} threshold {got:e} rounds to {:e}, expected {three:e}", round3(got))
        })?;
        check((got - four).abs() <= 0.5e-3 * four, || format!("{name} threshold {got:e} vs {four:e}"))?;
    }
    // Marker scheme: *** p < 0.001/66, ** p < 0.01/66, * p < 0.05/66, and a
    // dagger for uncorrected p < 0.001 that misses every corrected level.
    let cases = [
        (1.0e-5, "***"),
        (1.6e-5, "**"),
        (1.5e-4, "**"),
        (1.6e-4, "*"),
        (7.5e-4, "*"),
        (7.6e-4, "†"),
        (9.99e-4, "†"),
        (1.0e-3, ""),
        (0.04, ""),
    ];
    for (p, marker) in cases {
        let tier = t.tier(p);
        check(tier.marker() == marker, || format!("p={p} got `{}` want `{marker}`", tier.marker()))?;
    }
    check(
        SignificanceTier::Dagger.marker() == "†" && !SignificanceTier::Dagger.is_corrected(),
        || "dagger must be an uncorrected marker".into(),
    )?;
    Ok(format!(
        "66 tests -> {:.3e} / {:.3e} / {:.3e}; markers ***/**/*/†",
        t.three_star, t.two_star, t.one_star
    ))
}

// 3 ------------------------------------------------------------------------

/// U of `sample` against `baseline` counted pair by pair.
fn pairwise_u(sample: &[f64], baseline: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in sample {
        for &y in baseline {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Upper-tail p by enumerating every assignment of the pooled values to the
/// sample group.
fn enumerated_p(sample: &[f64], baseline: &[f64]) -> f64 {
    let pooled: Vec<f64> = sample.iter().chain(baseline).copied().collect();
    let (n, n1) = (pooled.len(), sample.len());
    let observed = pairwise_u(sample, baseline);
    let (mut hits, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let (mut s, mut b) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                s.push(v);
            } else {
                b.push(v);
            }
        }
        all += 1;
        if pairwise_u(&s, &b) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / all as f64
}

fn mann_whitney() -> Outcome {
    let opts = MannWhitneyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for n1 in 1..=6 {
        for n2 in 1..=6 {
            for trial in 0..12 {
                // Alternate heavily tied and continuous draws.
                let draw = |rng: &mut ChaCha8Rng| -> f64 {
                    if trial % 2 == 0 {
                        f64::from(rng.random_range(0..4u8))
                    } else {
                        rng.random::<f64>()
                    }
                };
                let s: Vec<f64> = (0..n1).map(|_| draw(&mut rng)).collect();
                let b: Vec<f64> = (0..n2).map(|_| draw(&mut rng)).collect();
                let got = mann_whitney_one_sided(&s, &b, Alternative::Greater, opts).map_err(|e| e.to_string())?;
                let want = enumerated_p(&s, &b);
                check((got.p_value - want).abs() <= MWU_TOL, || {
                    format!("n1={n1} n2={n2} {s:?} vs {b:?}: p {} != enumerated {want}", got.p_value)
                })?;
                check((got.u - pairwise_u(&s, &b)).abs() < 1e-9, || format!("U mismatch on {s:?} vs {b:?}"))?;
                compared += 1;
            }
        }
    }

    let hi = mann_whitney_one_sided(&[5.0, 6.0, 7.0], &[1.0, 2.0], Alternative::Greater, opts).unwrap();
    let lo = mann_whitney_one_sided(&[1.0, 2.0], &[5.0, 6.0, 7.0], Alternative::Greater, opts).unwrap();
    check(hi.r_rb == 1.0 && lo.r_rb == -1.0, || format!("endpoints {} / {}", hi.r_rb, lo.r_rb))?;

    for _ in 0..1000 {
        let n1 = rng.random_range(1..40);
        let n2 = rng.random_range(1..40);
        let s: Vec<f64> = (0..n1).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let b: Vec<f64> = (0..n2).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let a = mann_whitney_one_sided(&s, &b, Alternative::Greater, opts).unwrap();
        let c = mann_whitney_one_sided(&b, &s, Alternative::Greater, opts).unwrap();
        let nn = (n1 * n2) as f64;
        check((a.u + c.u - nn).abs() < 1e-9, || format!("U sum {} != {nn}", a.u + c.u))?;
    }
    Ok(format!("{compared} small-sample p values match enumeration within {MWU_TOL:e}; endpoints ±1; 1000 tied U sums"))
}

// 4 ------------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng, kind: IndicatorKind) -> BipartiteGraph {
    let users = rng.random_range(2..=50);
    let indicators = rng.random_range(1..=50);
    let edges = rng.random_range(1..=users * 3);
    let triples: Vec<(String, String, u64)> = (0..edges)
        .map(|_| {
            (
                format!("u{:02}", rng.random_range(0..users)),
                format!("i{:02}", rng.random_range(0..indicators)),
                rng.random_range(1..=3),
            )
        })
        .collect();
    BipartiteGraph::from_triples(kind, triples)
}

/// All-pairs TF-IDF cosine computed from dense user vectors.
fn brute_force_cosine(g: &BipartiteGraph) -> BTreeMap<(String, String), f64> {
    let users = g.users();
    let inds = g.indicators();
    let n = users.len() as f64;
    let dense: Vec<Vec<f64>> = users
        .iter()
        .map(|u| inds.iter().map(|i| g.weight(u, i).unwrap_or(0) as f64).collect())
        .collect();
    let idf: Vec<f64> = (0..inds.len())
        .map(|j| {
            let df = dense.iter().filter(|v| v[j] > 0.0).count() as f64;
            (n / df).ln()
        })
        .collect();
    let tfidf: Vec<Vec<f64>> = dense
        .iter()
        .map(|v| v.iter().zip(&idf).map(|(x, w)| x * w).collect())
        .collect();
    let mut out = BTreeMap::new();
    for a in 0..users.len() {
        for b in a + 1..users.len() {
            let dot: f64 = tfidf[a].iter().zip(&tfidf[b]).map(|(x, y)| x * y).sum();
            if dot <= 0.0 {
                continue;
            }
            let na: f64 = tfidf[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = tfidf[b].iter().map(|x| x * x).sum::<f64>().sqrt();
            out.insert((users[a].clone(), users[b].clone()), (dot / (na * nb)).min(1.0));
        }
    }
    out
}

fn similarity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut edges_checked = 0;
    let mut kept_total = 0;
    for fixture in 0..100 {
        let graphs = [
            random_graph(&mut rng, IndicatorKind::Hashtag),
            random_graph(&mut rng, IndicatorKind::Url),
        ];
        let nets: Vec<SimilarityNetwork> = graphs.iter().map(|g| project(g, IdfVariant::Log)).collect();
        for (g, net) in graphs.iter().zip(&nets) {
            let want = brute_force_cosine(g);
            check(net.edges.len() == want.len(), || {
                format!("fixture {fixture}: {} edges vs {} brute force", net.edges.len(), want.len())
            })?;
            for e in &net.edges {
                let w = want.get(&(e.user_a.clone(), e.user_b.clone())).copied().unwrap_or(f64::NAN);
                check((e.weight - w).abs() <= COSINE_TOL, || {
                    format!("fixture {fixture}: {}-{} {} vs {w}", e.user_a, e.user_b, e.weight)
                })?;
            }
            edges_checked += want.len();
        }

        // Top-K oracle over the pooled weights, keeping ties at the K-th value.
        let fraction = [0.02, 0.05, 0.1, 0.3][fixture % 4];
        let eligible: BTreeSet<&str> = nets
            .iter()
            .flat_map(|n| n.edges.iter().flat_map(|e| [e.user_a.as_str(), e.user_b.as_str()]))
            .collect();
        let e = eligible.len() as f64;
        let k = (fraction * e * (e - 1.0) / 2.0).floor() as usize;
        let mut weights: Vec<f64> = nets.iter().flat_map(|n| n.edges.iter().map(|e| e.weight)).collect();
        weights.sort_by(|a, b| b.total_cmp(a));
        let expected: BTreeSet<(usize, String, String)> = if k == 0 || weights.is_empty() {
            BTreeSet::new()
        } else {
            let kth = weights[k.min(weights.len()) - 1];
            nets.iter()
                .enumerate()
                .flat_map(|(i, n)| {
                    n.edges
                        .iter()
                        .filter(move |e| e.weight >= kth)
                        .map(move |e| (i, e.user_a.clone(), e.user_b.clone()))
                })
                .collect()
        };
        let pruned = prune_top_fraction(&nets, fraction, PruneMode::PooledPairSpace).map_err(|e| e.to_string())?;
        let got: BTreeSet<(usize, String, String)> = pruned
            .networks
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.edges.iter().map(move |e| (i, e.user_a.clone(), e.user_b.clone())))
            .collect();
        check(got == expected, || {
            format!("fixture {fixture}: pruned {} edges, oracle {}", got.len(), expected.len())
        })?;
        kept_total += got.len();
    }
    Ok(format!("100 fixtures, {edges_checked} edges within {COSINE_TOL:e}; {kept_total} pruned edges match top-K"))
}

// 5 ------------------------------------------------------------------------

struct SynthRun {
    _dir: tempfile::TempDir,
    config: PipelineConfig,
    posts: usize,
    planted: Vec<BTreeSet<String>>,
}

fn synth_run(cfg: &SynthConfig) -> Result<SynthRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = generate(cfg);
    let files = write_synth(dir.path(), &synth).map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::load(&files.config).map_err(|e| e.to_string())?;
    config.run.output_dir = dir.path().join("out");
    Ok(SynthRun {
        _dir: dir,
        config,
        posts: synth.posts.len(),
        planted: synth.planted.into_iter().map(|g| g.members).collect(),
    })
}

fn planted_recovery() -> Outcome {
    for seed in 1..=20 {
        let run = synth_run(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })?;
        let out = run_pipeline(
            &run.config,
            RunOptions {
                stop_after: Some(Stage::Components),
            },
        )
        .map_err(|e| e.to_string())?;
        if let Some(e) = out.error {
            return Err(format!("seed {seed}: {e}"));
        }
        let found: Vec<&BTreeSet<String>> = out.state.components.iter().map(|c| &c.members).collect();
        for group in &run.planted {
            check(found.contains(&group), || format!("seed {seed}: planted group {group:?} not recovered"))?;
        }
        let spurious: Vec<usize> = out
            .state
            .components
            .iter()
            .filter(|c| !run.planted.contains(&c.members))
            .map(|c| c.size())
            .collect();
        check(spurious.is_empty(), || format!("seed {seed}: spurious components of sizes {spurious:?}"))?;
    }
    Ok("both planted groups recovered as distinct components, no false positives, 20 seeds".into())
}

// 6 ------------------------------------------------------------------------

fn four_posts(seed: u64) -> PermutationConfig {
    PermutationConfig {
        post_component: BTreeMap::from([
            ("p1".into(), 1),
            ("p2".into(), 1),
            ("p3".into(), 2),
            ("p4".into(), 3),
        ]),
        n_misleading: 2,
        n_draws: 100_000,
        seed,
    }
}

fn permutation_calibration() -> Outcome {
    // Of the six 2-subsets of {p1..p4}, only {p1, p2} stays in one component.
    let exact = 1.0 / 6.0;
    let a = permutation_concentration_test(&four_posts(1), 1).map_err(|e| e.to_string())?;
    let b = permutation_concentration_test(&four_posts(2), 1).map_err(|e| e.to_string())?;
    check((a.p_value - exact).abs() <= PERMUTATION_TOL, || format!("p={} vs 1/6", a.p_value))?;
    let bound = 3.0 * (exact * (1.0 - exact) / 100_000.0).sqrt();
    let diff = (a.p_value - b.p_value).abs();
    check(diff < bound, || format!("seeds differ by {diff} >= {bound}"))?;
    Ok(format!("p={:.4} (exact 1/6, tol {PERMUTATION_TOL}); seed gap {diff:.5} < {bound:.5}", a.p_value))
}

// 7 ------------------------------------------------------------------------

fn random_embeddings(rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let n = rng.random_range(2..=120);
    let dim = rng.random_range(2..=6);
    let centres: Vec<Vec<f64>> = (0..rng.random_range(1..=8))
        .map(|_| (0..dim).map(|_| rng.random_range(-40.0..40.0)).collect())
        .collect();
    EmbeddingTable::from_rows((0..n).map(|i| {
        let c = &centres[rng.random_range(0..centres.len())];
        let v: Vec<f64> = c.iter().map(|x| x + rng.random_range(-6.0..6.0)).collect();
        (format!("img{i:03}"), v)
    }))
    .unwrap()
}

/// Partition from the transitive closure of all pairs closer than `t`.
fn closure_partition(t: &EmbeddingTable, threshold: f64) -> BTreeSet<BTreeSet<String>> {
    let n = t.len();
    let mut group: Vec<usize> = (0..n).collect();
    let close = |a: usize, b: usize| {
        let d2: f64 = t.vector(a).iter().zip(t.vector(b)).map(|(x, y)| (x - y) * (x - y)).sum();
        d2.sqrt() < threshold
    };
    // Relabel until stable: each pass merges the labels of every close pair.
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in a + 1..n {
                if close(a, b) && group[a] != group[b] {
                    let (keep, drop) = (group[a].min(group[b]), group[a].max(group[b]));
                    group.iter_mut().filter(|g| **g == drop).for_each(|g| *g = keep);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut parts: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, g) in group.into_iter().enumerate() {
        parts.entry(g).or_default().insert(t.ids()[i].clone());
    }
    parts.into_values().collect()
}

fn map_partition(groups: BTreeMap<&str, Vec<&str>>) -> BTreeSet<BTreeSet<String>> {
    groups
        .into_values()
        .map(|g| g.into_iter().map(str::to_string).collect())
        .collect()
}

fn dedup_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..50 {
        let table = random_embeddings(&mut rng);
        let threshold = rng.random_range(1.0..12.0);
        let want = closure_partition(&table, threshold);
        let exhaustive = dedup_images(&table, threshold).map_err(|e| e.to_string())?;
        let grid = dedup_images_with(&table, threshold, 0).map_err(|e| e.to_string())?;
        check(map_partition(exhaustive.groups()) == want, || format!("set {set}: exhaustive grouping differs"))?;
        check(map_partition(grid.groups()) == want, || format!("set {set}: grid grouping differs"))?;

        let mut previous: Option<BTreeSet<BTreeSet<String>>> = None;
        for t in [0.5, 2.0, 5.0, 10.0, 20.0] {
            let parts = map_partition(dedup_images(&table, t).map_err(|e| e.to_string())?.groups());
            if let Some(prev) = &previous {
                let split = prev.iter().any(|g| !parts.iter().any(|h| g.is_subset(h)));
                check(!split, || format!("set {set}: raising the threshold to {t} split a group"))?;
            }
            previous = Some(parts);
        }
    }
    Ok("50 sets match the pairwise closure (exhaustive and grid); groups only merge as the threshold rises".into())
}

// 8 ------------------------------------------------------------------------

fn kl_kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(1..60);
        let comp: Vec<u64> = (0..k).map(|_| rng.random_range(0..30)).collect();
        let base: Vec<u64> = (0..k).map(|_| rng.random_range(0..300)).collect();
        let p = kl_profile(1, &comp, &base, 1e-9).map_err(|e| e.to_string())?;
        let sum: f64 = p.per_cluster_kl.iter().sum();
        worst = worst.max((sum - p.kl_total).abs());
    }
    check(worst <= KL_SUM_TOL, || format!("KL decomposition off by {worst:e}"))?;

    let table = EmbeddingTable::from_rows((0..1500).map(|i| {
        let c = f64::from(i % 7) * 10.0;
        let v: Vec<f64> = (0..8).map(|_| c + rng.random_range(-8.0..8.0)).collect();
        (format!("img{i:05}"), v)
    }))
    .unwrap();
    let mut reference = None;
    for workers in [1, 2, 8] {
        let opts = KMeansOptions {
            workers: Some(workers),
            ..KMeansOptions::default()
        };
        let model = kmeans(&table, 20, 42, opts).map_err(|e| e.to_string())?;
        for w in model.inertia_history.windows(2) {
            check(w[1] <= w[0] * (1.0 + 1e-12), || format!("objective rose {} -> {}", w[0], w[1]))?;
        }
        match &reference {
            None => reference = Some(model),
            Some(r) => {
                check(r.assignment == model.assignment && r.centroids == model.centroids, || {
                    format!("{workers} workers changed the clustering")
                })?;
            }
        }
    }
    let iterations = reference.map_or(0, |m| m.iterations);
    Ok(format!(
        "KL sums within {worst:.1e}; objective non-increasing over {iterations} iterations; identical at 1/2/8 workers"
    ))
}

// 9 ------------------------------------------------------------------------

fn read_tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != RunManifest::FILE_NAME) {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let run = synth_run(&SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    })?;
    let mut trees = Vec::new();
    let mut manifests = Vec::new();
    for attempt in ["a", "b"] {
        let mut cfg = run.config.clone();
        cfg.run.output_dir = run.config.run.output_dir.join(attempt);
        let out = run_pipeline(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
        if let Some(e) = out.error {
            return Err(e.to_string());
        }
        trees.push(read_tree(&cfg.run.output_dir)?);
        let mut m = out.manifest;
        m.stages.iter_mut().for_each(|s| s.seconds = 0.0);
        m.config.run.output_dir = PathBuf::new();
        m.config_hash.clear();
        manifests.push(serde_json::to_string(&m).map_err(|e| e.to_string())?);
    }
    check(trees[0].keys().eq(trees[1].keys()), || "runs wrote different file sets".into())?;
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(p, bytes)| trees[1].get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    check(differing.is_empty(), || format!("files differ: {differing:?}"))?;
    check(manifests[0] == manifests[1], || "manifests differ beyond timings".into())?;
    Ok(format!("{} report files byte-identical across two runs", trees[0].len()))
}

// 10 -----------------------------------------------------------------------

fn performance() -> Outcome {
    let run = synth_run(&SynthConfig {
        seed: 10,
        mean_posts_per_user: 20,
        ..SynthConfig::default()
    })?;
    check(run.posts >= 100_000, || format!("corpus has only {} posts", run.posts))?;
    let started = Instant::now();
    let out = run_pipeline(&run.config, RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    if let Some(e) = out.error {
        return Err(e.to_string());
    }
    check(out.manifest.complete, || "run incomplete".into())?;
    check(elapsed < PIPELINE_MAX_RUNTIME, || format!("{} posts took {elapsed:?}", run.posts))?;
    Ok(format!("{} posts, full pipeline in {:.1}s (limit {}s)", run.posts, elapsed.as_secs_f64(), PIPELINE_MAX_RUNTIME.as_secs()))
}
