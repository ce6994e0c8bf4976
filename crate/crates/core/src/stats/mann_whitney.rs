//! One-sided Mann-Whitney U test with an exact permutation distribution for
//! small samples and a tie-corrected normal approximation otherwise.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::rank::{midranks, tie_sizes};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// The sample tends to exceed the baseline.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyOptions {
    /// Use the exact distribution when `n1 * n2 <= exact_cutoff`.
    pub exact_cutoff: usize,
}

impl Default for MannWhitneyOptions {
    fn default() -> Self {
        Self { exact_cutoff: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// Pairs with sample > baseline, plus half the tied pairs.
    pub u: f64,
    pub p_value: f64,
    /// Rank-biserial correlation `2U / (n1 n2) - 1`.
    pub r_rb: f64,
    pub method: PMethod,
    /// All pooled values are equal; `p_value` is 1.
    pub degenerate: bool,
    pub n1: usize,
    pub n2: usize,
}

pub fn rank_biserial(u: f64, n1: usize, n2: usize) -> f64 {
    2.0 * u / (n1 as f64 * n2 as f64) - 1.0
}

pub fn mann_whitney_one_sided(
    sample: &[f64],
    baseline: &[f64],
    alternative: Alternative,
    opts: MannWhitneyOptions,
) -> Result<MannWhitney> {
    let Alternative::Greater = alternative;
    let (n1, n2) = (sample.len(), baseline.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("Mann-Whitney needs two non-empty samples".into()));
    }
    if sample.iter().chain(baseline).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("Mann-Whitney input contains NaN".into()));
    }
    let pooled: Vec<f64> = sample.iter().chain(baseline).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    let r_rb = rank_biserial(u, n1, n2);
    let degenerate = pooled.iter().all(|&x| x == pooled[0]);

    let (p_value, method) = if n1 * n2 <= opts.exact_cutoff {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let observed: u64 = doubled[..n1].iter().sum();
        (exact_upper_tail(&doubled, n1, observed), PMethod::Exact)
    } else {
        (normal_upper_tail(u, n1, n2, &tie_sizes(&pooled)), PMethod::Normal)
    };
    Ok(MannWhitney {
        u,
        p_value: if degenerate { 1.0 } else { p_value.clamp(0.0, 1.0) },
        r_rb,
        method,
        degenerate,
        n1,
        n2,
    })
}

/// `P(sum of n1 doubled ranks drawn without replacement >= observed)`
/// under the permutation distribution of the pooled ranks.
///
/// The dynamic program runs over the smaller group; when that is the
/// baseline, the tail is taken on its complement sum.
pub fn exact_upper_tail(doubled_ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let n = doubled_ranks.len();
    let total: u64 = doubled_ranks.iter().sum();
    let (m, upper, threshold) = if n1 <= n - n1 {
        (n1, true, observed)
    } else {
        // sample sum >= observed  <=>  complement sum <= total - observed
        (n - n1, false, total - observed)
    };
    let max_sum = total as usize;
    // counts[k][s]: number of k-subsets of the elements seen so far with sum s.
    let mut counts = vec![vec![0.0f64; max_sum + 1]; m + 1];
    counts[0][0] = 1.0;
    for (seen, &r) in doubled_ranks.iter().enumerate() {
        let r = r as usize;
        for k in (1..=m.min(seen + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let dist = &counts[m];
    let all: f64 = dist.iter().sum();
    let tail: f64 = if upper {
        dist[threshold as usize..].iter().sum()
    } else {
        dist[..=threshold as usize].iter().sum()
    };
    tail / all
}

/// Upper-tail p of U under the normal approximation with tie and continuity
/// corrections.
pub fn normal_upper_tail(u: f64, n1: usize, n2: usize, ties: &[usize]) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>()
        / (n * (n - 1.0)).max(1.0);
    let var = a * b / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - a * b / 2.0 - 0.5) / var.sqrt();
    Normal::standard().sf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(sample: &[f64], baseline: &[f64]) -> MannWhitney {
        mann_whitney_one_sided(sample, baseline, Alternative::Greater, MannWhitneyOptions::default())
            .unwrap()
    }

    #[test]
    fn separated_two_by_two() {
        let r = run(&[3.0, 4.0], &[1.0, 2.0]);
        assert_eq!(r.u, 4.0);
        assert_eq!(r.r_rb, 1.0);
        assert!((r.p_value - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.method, PMethod::Exact);
    }

    #[test]
    fn reversed_two_by_two() {
        let r = run(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(r.u, 0.0);
        assert_eq!(r.r_rb, -1.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_have_zero_effect() {
        let r = run(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r.u, 4.5);
        assert_eq!(r.r_rb, 0.0);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let r = run(&[0.5; 4], &[0.5; 7]);
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let big = mann_whitney_one_sided(
            &[0.5; 30],
            &[0.5; 30],
            Alternative::Greater,
            MannWhitneyOptions::default(),
        )
        .unwrap();
        assert_eq!(big.method, PMethod::Normal);
        assert!(big.degenerate);
        assert_eq!(big.p_value, 1.0);
    }

    #[test]
    fn empty_or_nan_rejected() {
        let opts = MannWhitneyOptions::default();
        assert!(mann_whitney_one_sided(&[], &[1.0], Alternative::Greater, opts).is_err());
        assert!(mann_whitney_one_sided(&[f64::NAN], &[1.0], Alternative::Greater, opts).is_err());
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let sample: Vec<f64> = (0..30).map(|i| i as f64 + 10.0).collect();
        let baseline: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let r = run(&sample, &baseline);
        assert_eq!(r.method, PMethod::Normal);
        assert!(r.p_value < 0.01);
    }

    /// Brute force over every assignment of pooled positions to the sample.
    fn enumerate_p(sample: &[f64], baseline: &[f64]) -> f64 {
        let pooled: Vec<f64> = sample.iter().chain(baseline).copied().collect();
        let n = pooled.len();
        let n1 = sample.len();
        let u_of = |idx: &[usize]| -> f64 {
            let mut u = 0.0;
            for i in 0..n {
                if !idx.contains(&i) {
                    continue;
                }
                for j in 0..n {
                    if idx.contains(&j) {
                        continue;
                    }
                    if pooled[i] > pooled[j] {
                        u += 1.0;
                    } else if pooled[i] == pooled[j] {
                        u += 0.5;
                    }
                }
            }
            u
        };
        let observed = u_of(&(0..n1).collect::<Vec<_>>());
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).collect();
            total += 1;
            if u_of(&idx) >= observed - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            sample in proptest::collection::vec(0u8..5, 1..=6),
            baseline in proptest::collection::vec(0u8..5, 1..=6),
        ) {
            let s: Vec<f64> = sample.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = baseline.iter().map(|&x| x as f64).collect();
            let r = run(&s, &b);
            prop_assert_eq!(r.method, PMethod::Exact);
            if !r.degenerate {
                prop_assert!((r.p_value - enumerate_p(&s, &b)).abs() < 1e-12);
            }
        }

        #[test]
        fn u_statistics_complement(
            sample in proptest::collection::vec(0u8..6, 1..15),
            baseline in proptest::collection::vec(0u8..6, 1..15),
        ) {
            let s: Vec<f64> = sample.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = baseline.iter().map(|&x| x as f64).collect();
            let forward = run(&s, &b);
            let backward = run(&b, &s);
            prop_assert!((forward.u + backward.u - (s.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((forward.r_rb + backward.r_rb).abs() < 1e-12);
            prop_assert_eq!(forward.r_rb, rank_biserial(forward.u, s.len(), b.len()));
        }

        #[test]
        fn effect_invariant_under_monotone_transform(
            sample in proptest::collection::vec(0.0f64..1.0, 1..20),
            baseline in proptest::collection::vec(0.0f64..1.0, 1..20),
        ) {
            let f = |x: &f64| (3.0 * x).exp() + 7.0;
            let a = run(&sample, &baseline);
            let s2: Vec<f64> = sample.iter().map(f).collect();
            let b2: Vec<f64> = baseline.iter().map(f).collect();
            let b = run(&s2, &b2);
            prop_assert_eq!(a.r_rb, b.r_rb);
            prop_assert_eq!(a.u, b.u);
        }

        #[test]
        fn exact_and_normal_agree_mid_sized(
            s in proptest::collection::vec(0.0f64..1.0, 8..=12),
            b in proptest::collection::vec(0.0f64..1.0, 8..=12),
        ) {
            let exact = mann_whitney_one_sided(&s, &b, Alternative::Greater, MannWhitneyOptions { exact_cutoff: usize::MAX }).unwrap();
            let approx = mann_whitney_one_sided(&s, &b, Alternative::Greater, MannWhitneyOptions { exact_cutoff: 0 }).unwrap();
            prop_assert_eq!(exact.method, PMethod::Exact);
            prop_assert_eq!(approx.method, PMethod::Normal);
            prop_assert!((exact.p_value - approx.p_value).abs() < 0.01,
                "exact {} vs normal {}", exact.p_value, approx.p_value);
        }
    }
}
