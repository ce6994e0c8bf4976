//! Component-versus-baseline score comparisons over a family of metrics.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bonferroni::{SignificanceTier, TierThresholds};
use super::mann_whitney::{mann_whitney_one_sided, Alternative, MannWhitneyOptions, PMethod};
use super::rank::median;
use super::scores::ScoreTable;
use crate::error::{Error, Result};
use crate::network::CoordinationComponent;

/// When a significance marker is attached to a test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerRule {
    /// Whenever the p-value reaches a tier.
    #[default]
    Always,
    /// Only when the component median also exceeds the baseline median.
    MedianAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub component_id: usize,
    pub metric_name: String,
    pub n_component: usize,
    pub n_baseline: usize,
    pub u_statistic: f64,
    pub p_value: f64,
    pub r_rb: f64,
    pub method: PMethod,
    pub degenerate: bool,
    pub significance_tier: SignificanceTier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentRow {
    pub component_id: usize,
    /// Component members with at least one scored post.
    pub scored_users: usize,
    pub medians: BTreeMap<String, Option<f64>>,
    pub tests: BTreeMap<String, TestResult>,
}

impl ComponentRow {
    /// Metrics whose tier passes a corrected level.
    pub fn significant_metrics(&self) -> Vec<&str> {
        self.tests
            .values()
            .filter(|t| t.significance_tier.is_corrected())
            .map(|t| t.metric_name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub metrics: Vec<String>,
    pub thresholds: TierThresholds,
    pub marker_rule: MarkerRule,
    pub baseline_users: usize,
    pub baseline_medians: BTreeMap<String, Option<f64>>,
    pub rows: Vec<ComponentRow>,
}

impl ComparisonTable {
    pub fn row(&self, component_id: usize) -> Option<&ComponentRow> {
        self.rows.iter().find(|r| r.component_id == component_id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub mann_whitney: MannWhitneyOptions,
    pub marker_rule: MarkerRule,
}

/// Tests every component against the users outside all components, for each
/// metric. The Bonferroni family is `components × metrics`.
pub fn compare_components(
    scores: &ScoreTable,
    comps: &[CoordinationComponent],
    metrics: &[String],
    opts: CompareOptions,
) -> Result<ComparisonTable> {
    let coordinated: BTreeSet<&str> = comps
        .iter()
        .flat_map(|c| c.members.iter().map(String::as_str))
        .collect();
    let baseline: Vec<&str> = scores.users().filter(|u| !coordinated.contains(u)).collect();
    if baseline.is_empty() && !comps.is_empty() {
        return Err(Error::InvalidInput(
            "no scored users outside the coordination components".into(),
        ));
    }
    let thresholds = TierThresholds::for_tests(comps.len() * metrics.len());

    let baseline_values: BTreeMap<&str, Vec<f64>> = metrics
        .iter()
        .map(|m| (m.as_str(), scores.values_for(m, baseline.iter().copied())))
        .collect();
    let baseline_medians: BTreeMap<String, Option<f64>> = baseline_values
        .iter()
        .map(|(m, v)| (m.to_string(), median(v)))
        .collect();

    let rows = comps
        .par_iter()
        .map(|c| -> Result<ComponentRow> {
            let members = c.members.iter().map(String::as_str);
            let scored_users = members.clone().filter(|u| scores.users_contains(u)).count();
            let mut medians = BTreeMap::new();
            let mut tests = BTreeMap::new();
            for m in metrics {
                let sample = scores.values_for(m, members.clone());
                let med = median(&sample);
                medians.insert(m.clone(), med);
                let base = &baseline_values[m.as_str()];
                if sample.is_empty() || base.is_empty() {
                    continue;
                }
                let mw = mann_whitney_one_sided(&sample, base, Alternative::Greater, opts.mann_whitney)?;
                let mut tier = thresholds.tier(mw.p_value);
                if opts.marker_rule == MarkerRule::MedianAbove {
                    let above = matches!((med, baseline_medians[m]), (Some(a), Some(b)) if a > b);
                    if !above {
                        tier = SignificanceTier::None;
                    }
                }
                tests.insert(
                    m.clone(),
                    TestResult {
                        component_id: c.component_id,
                        metric_name: m.clone(),
                        n_component: mw.n1,
                        n_baseline: mw.n2,
                        u_statistic: mw.u,
                        p_value: mw.p_value,
                        r_rb: mw.r_rb,
                        method: mw.method,
                        degenerate: mw.degenerate,
                        significance_tier: tier,
                    },
                );
            }
            Ok(ComponentRow {
                component_id: c.component_id,
                scored_users,
                medians,
                tests,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ComparisonTable {
        metrics: metrics.to_vec(),
        thresholds,
        marker_rule: opts.marker_rule,
        baseline_users: baseline.len(),
        baseline_medians,
        rows,
    })
}
