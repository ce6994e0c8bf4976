use serde::Serialize;

use super::kmeans::KMeansModel;
use crate::error::{Error, Result};

pub const DEFAULT_KL_EPSILON: f64 = 1e-9;

/// A component's smoothed cluster distribution and its KL divergence from
/// the baseline, split into per-cluster terms `p_i ln(p_i / q_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProfile {
    pub component_id: usize,
    pub cluster_distribution: Vec<f64>,
    pub baseline_distribution: Vec<f64>,
    pub per_cluster_kl: Vec<f64>,
    pub kl_total: f64,
}

impl ClusterProfile {
    /// Clusters by descending contribution, ties by index.
    pub fn top_clusters(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.per_cluster_kl.iter().copied().enumerate().collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        idx.truncate(n);
        idx
    }
}

fn smooth(counts: &[u64], eps: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + counts.len() as f64 * eps;
    counts.iter().map(|&c| (c as f64 + eps) / denom).collect()
}

pub fn kl_profile(
    component_id: usize,
    component_counts: &[u64],
    baseline_counts: &[u64],
    eps: f64,
) -> Result<ClusterProfile> {
    if component_counts.len() != baseline_counts.len() || component_counts.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cluster count vectors must be non-empty and equal length ({} vs {})",
            component_counts.len(),
            baseline_counts.len()
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidInput("KL smoothing epsilon must be positive".into()));
    }
    let p = smooth(component_counts, eps);
    let q = smooth(baseline_counts, eps);
    let per_cluster_kl: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).collect();
    let kl_total = per_cluster_kl.iter().sum();
    Ok(ClusterProfile {
        component_id,
        cluster_distribution: p,
        baseline_distribution: q,
        per_cluster_kl,
        kl_total,
    })
}

/// Number of the given images falling in each of `k` clusters. Images the
/// model has not seen are skipped.
pub fn cluster_counts<'a>(
    model: &KMeansModel,
    image_ids: impl IntoIterator<Item = &'a str>,
) -> Vec<u64> {
    let mut counts = vec![0u64; model.k()];
    for id in image_ids {
        if let Some(c) = model.cluster_of(id) {
            counts[c] += 1;
        }
    }
    counts
}
