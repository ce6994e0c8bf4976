//! Seeded k-means (k-means++ initialization, Lloyd iterations).
//!
//! The assignment step runs in parallel but each point is handled
//! independently and centroid sums are reduced sequentially in point order,
//! so results do not depend on the worker count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Thread count for the assignment step; `None` uses the ambient pool.
    pub workers: Option<usize>,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansModel {
    /// Point ids in sorted order.
    pub ids: Vec<String>,
    /// Cluster of each id in `ids`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.ids
            .binary_search_by(|x| x.as_str().cmp(id))
            .ok()
            .map(|i| self.assignment[i])
    }

    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.assignment.iter().copied())
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(
    embeddings: &EmbeddingTable,
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<KMeansModel> {
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(|| run(embeddings, k, seed, opts)),
        None => run(embeddings, k, seed, opts),
    }
}

fn run(emb: &EmbeddingTable, k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeansModel> {
    let n = emb.len();
    if k == 0 {
        return Err(Error::InvalidInput("k-means needs k ≥ 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "k-means with k = {k} exceeds the {n} available points"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| emb.ids()[a].cmp(&emb.ids()[b]));
    let points: Vec<&[f64]> = order.iter().map(|&i| emb.vector(i)).collect();
    let ids: Vec<String> = order.iter().map(|&i| emb.ids()[i].clone()).collect();
    let dim = emb.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(&points, k, &mut rng);

    let mut assignment = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let nearest: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(p, centroid);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best
            })
            .collect();
        inertia_history.push(nearest.iter().map(|&(_, d)| d).sum());
        for (slot, &(c, _)) in assignment.iter_mut().zip(&nearest) {
            *slot = c;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            sizes[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&sizes)
            .zip(&centroids)
            .map(|((s, &size), old)| {
                if size == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / size as f64).collect()
                }
            })
            .collect();

        // Reseed empty clusters at the points farthest from their centroid.
        let mut used = vec![false; n];
        for c in (0..k).filter(|&c| sizes[c] == 0) {
            if let Some((far, _)) = nearest
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            {
                used[far] = true;
                next[c] = points[far].to_vec();
            }
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(KMeansModel {
        ids,
        assignment,
        centroids,
        inertia_history,
        iterations,
        converged,
    })
}

fn init_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, points[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Remaining points coincide with chosen centroids.
            (0..n).find(|&i| !chosen[i]).expect("k ≤ n")
        };
        chosen[pick] = true;
        let c = points[pick].to_vec();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}
