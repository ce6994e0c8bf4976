use std::fmt;

use serde::{Deserialize, Serialize};

/// Significance tier under layered Bonferroni correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTier {
    None,
    /// Uncorrected `p < 0.001` without reaching a corrected tier.
    Dagger,
    Star,
    StarStar,
    StarStarStar,
}

impl SignificanceTier {
    pub fn marker(self) -> &'static str {
        match self {
            SignificanceTier::None => "",
            SignificanceTier::Dagger => "†",
            SignificanceTier::Star => "*",
            SignificanceTier::StarStar => "**",
            SignificanceTier::StarStarStar => "***",
        }
    }

    /// Passes a Bonferroni-corrected level.
    pub fn is_corrected(self) -> bool {
        self >= SignificanceTier::Star
    }
}

impl fmt::Display for SignificanceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marker())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierThresholds {
    pub n_tests: usize,
    pub three_star: f64,
    pub two_star: f64,
    pub one_star: f64,
    pub dagger: f64,
}

impl TierThresholds {
    pub fn for_tests(n_tests: usize) -> Self {
        let n = n_tests.max(1) as f64;
        Self {
            n_tests,
            three_star: 0.001 / n,
            two_star: 0.01 / n,
            one_star: 0.05 / n,
            dagger: 0.001,
        }
    }

    pub fn tier(&self, p: f64) -> SignificanceTier {
        if p < self.three_star {
            SignificanceTier::StarStarStar
        } else if p < self.two_star {
            SignificanceTier::StarStar
        } else if p < self.one_star {
            SignificanceTier::Star
        } else if p < self.dagger {
            SignificanceTier::Dagger
        } else {
            SignificanceTier::None
        }
    }
}

pub fn layered_bonferroni(p: f64, n_tests: usize) -> SignificanceTier {
    TierThresholds::for_tests(n_tests).tier(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_thresholds() {
        let t = TierThresholds::for_tests(66);
        assert_eq!(format!("{:.3e}", t.three_star), "1.515e-5");
        assert_eq!(format!("{:.3e}", t.two_star), "1.515e-4");
        assert_eq!(format!("{:.3e}", t.one_star), "7.576e-4");
    }

    #[test]
    fn tiers() {
        assert_eq!(layered_bonferroni(1.0e-5, 66), SignificanceTier::StarStarStar);
        assert_eq!(layered_bonferroni(1.0e-4, 66), SignificanceTier::StarStar);
        assert_eq!(layered_bonferroni(7.0e-4, 66), SignificanceTier::Star);
        assert_eq!(layered_bonferroni(9.0e-4, 66), SignificanceTier::Dagger);
        assert_eq!(layered_bonferroni(0.001, 66), SignificanceTier::None);
        assert_eq!(layered_bonferroni(0.5, 66), SignificanceTier::None);
    }

    #[test]
    fn markers() {
        let m: Vec<_> = [
            SignificanceTier::StarStarStar,
            SignificanceTier::StarStar,
            SignificanceTier::Star,
            SignificanceTier::Dagger,
            SignificanceTier::None,
        ]
        .iter()
        .map(|t| t.marker())
        .collect();
        assert_eq!(m, ["***", "**", "*", "†", ""]);
    }
}
