use super::rank::midranks;
use crate::error::{Error, Result};

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "spearman needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput("spearman needs at least 3 points".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("spearman input contains NaN".into()));
    }
    pearson(&midranks(x), &midranks(y))
        .ok_or_else(|| Error::InvalidInput("spearman is undefined for a constant vector".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reverse() {
        let x = [0.3, 1.2, -4.0, 8.0, 2.5];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_short_inputs_flagged() {
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    /// Midranks by counting (less + half of equal-others) and the
    /// textbook Pearson formula, with no shared code.
    fn brute_force(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let sx: f64 = rx.iter().sum();
        let sy: f64 = ry.iter().sum();
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
        let sxx: f64 = rx.iter().map(|a| a * a).sum();
        let syy: f64 = ry.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn eleven_points_with_ties() {
        let x = [6.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        let y = [0.102, -0.038, 0.351, -0.507, -0.358, 0.462, -0.204, -0.265, -0.355, 0.198, -0.060];
        let got = spearman(&x, &y).unwrap();
        assert!((got - brute_force(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn component_effect_sizes() {
        let toxicity = [0.102, -0.038, 0.351, -0.507, -0.358, 0.462, -0.204, -0.265, -0.355, 0.198, -0.060];
        let fear = [0.355, -0.040, 0.257, 0.295, 0.451, 0.452, 0.709, 0.444, -0.153, -0.087, 0.228];
        let r = spearman(&toxicity, &fear).unwrap();
        assert_eq!(format!("{r:.2}"), "-0.03");
        assert!((r - (-3.0 / 110.0)).abs() < 1e-12);
    }
}
