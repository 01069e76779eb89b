use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ProbeError;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesCase {
    pub prior: Vec<f64>,
    pub likelihood: Vec<f64>,
    pub target_posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesResult {
    pub posterior: Vec<f64>,
    /// KL(target ‖ posterior) in nats.
    pub kl: f64,
}

/// `Σ p ln(p / q)`, with `0 ln 0 = 0` and `+∞` where `p > 0 = q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// Posterior ∝ likelihood × prior, and its divergence from the case's target.
pub fn bayes_posterior(case: &BayesCase) -> Result<BayesResult, ProbeError> {
    let n = case.prior.len();
    if n == 0 || case.likelihood.len() != n || case.target_posterior.len() != n {
        return Err(ProbeError::InvalidCase("prior, likelihood and target must share a non-zero length".into()));
    }
    if case.prior.iter().any(|&p| !(p >= 0.0)) || (case.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(ProbeError::InvalidCase("prior is not a distribution".into()));
    }
    if case.likelihood.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(ProbeError::InvalidCase("likelihood must be finite and nonnegative".into()));
    }
    let joint: Vec<f64> = case.prior.iter().zip(&case.likelihood).map(|(p, l)| p * l).collect();
    let z: f64 = joint.iter().sum();
    if z <= 0.0 {
        return Err(ProbeError::ZeroNormalizer);
    }
    let posterior: Vec<f64> = joint.iter().map(|j| j / z).collect();
    let kl = kl_divergence(&case.target_posterior, &posterior);
    Ok(BayesResult { posterior, kl })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub std_diff: f64,
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub df: usize,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a[i] − b[i]`. Zero-variance differences are
/// flagged degenerate with `p = 1` when they are all zero and `p = 0`
/// otherwise.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<PairedTest, ProbeError> {
    if a.len() != b.len() {
        return Err(ProbeError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(ProbeError::TooFew(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&d);
    let std_diff = std_dev(&d);
    let df = n - 1;
    if std_diff == 0.0 {
        return Ok(PairedTest {
            n,
            mean_diff,
            std_diff,
            t: None,
            df,
            p_value: if mean_diff == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean_diff / (std_diff / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTest { n, mean_diff, std_diff, t: Some(t), df, p_value, degenerate: false })
}
