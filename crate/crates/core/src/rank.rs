//! Sequential stopping rules that turn step p-values into a rank estimate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{sequential_pvalues, Method, TestOutcome, TestSettings};
use crate::spectra::{svd_full, ObservedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopRule {
    Simple,
    Strong,
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopRule::Simple => "simple",
            StopRule::Strong => "strong",
        })
    }
}

impl FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" | "simplestop" => Ok(StopRule::Simple),
            "strong" | "strongstop" => Ok(StopRule::Strong),
            other => Err(Error::param(format!("unknown stopping rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDecision {
    pub kappa_hat: usize,
    pub rule: StopRule,
    pub alpha: f64,
    pub pvalues: Vec<f64>,
    /// `alpha k / (p - 1)` for each step; empty for the simple rule.
    #[serde(default)]
    pub per_step_thresholds: Vec<f64>,
    /// `exp(sum_{j >= k} log p_j / j)` for each step; empty for the simple rule.
    #[serde(default)]
    pub tail_statistics: Vec<f64>,
}

fn check(pvalues: &[f64], alpha: f64) -> Result<()> {
    if pvalues.is_empty() {
        return Err(Error::param("no p-values supplied"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param(format!("p-value {p} outside [0, 1]")));
    }
    Ok(())
}

/// `max{k : p_k <= alpha}`, or 0.
pub fn simple_stop(pvalues: &[f64], alpha: f64) -> Result<usize> {
    check(pvalues, alpha)?;
    Ok(pvalues
        .iter()
        .rposition(|&p| p <= alpha)
        .map_or(0, |i| i + 1))
}

/// Tail statistics `exp(sum_{j=k}^{m} log p_j / j)` for `k = 1..m`.
pub fn strong_stop_statistics(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    let mut out = vec![0.0; m];
    let mut acc = 0.0;
    for k in (1..=m).rev() {
        acc += pvalues[k - 1].ln() / k as f64;
        out[k - 1] = acc.exp();
    }
    out
}

/// `max{k : exp(sum_{j>=k} log p_j / j) <= alpha k / (p - 1)}`, or 0.
pub fn strong_stop(pvalues: &[f64], alpha: f64) -> Result<usize> {
    Ok(strong_stop_decision(pvalues, alpha)?.kappa_hat)
}

pub fn strong_stop_decision(pvalues: &[f64], alpha: f64) -> Result<RankDecision> {
    check(pvalues, alpha)?;
    let m = pvalues.len();
    let stats = strong_stop_statistics(pvalues);
    let thresholds: Vec<f64> = (1..=m).map(|k| alpha * k as f64 / m as f64).collect();
    let kappa_hat = (1..=m)
        .rev()
        .find(|&k| stats[k - 1] <= thresholds[k - 1])
        .unwrap_or(0);
    Ok(RankDecision {
        kappa_hat,
        rule: StopRule::Strong,
        alpha,
        pvalues: pvalues.to_vec(),
        per_step_thresholds: thresholds,
        tail_statistics: stats,
    })
}

pub fn decide(pvalues: &[f64], rule: StopRule, alpha: f64) -> Result<RankDecision> {
    match rule {
        StopRule::Strong => strong_stop_decision(pvalues, alpha),
        StopRule::Simple => Ok(RankDecision {
            kappa_hat: simple_stop(pvalues, alpha)?,
            rule,
            alpha,
            pvalues: pvalues.to_vec(),
            per_step_thresholds: Vec::new(),
            tail_statistics: Vec::new(),
        }),
    }
}

/// Full pipeline: SVD, step p-values, stopping rule.
pub fn estimate_rank(
    y: &ObservedMatrix,
    method: Method,
    rule: StopRule,
    sigma2: Option<f64>,
    settings: &TestSettings,
) -> Result<(RankDecision, Vec<TestOutcome>)> {
    let spectrum = svd_full(y)?;
    let outcomes = sequential_pvalues(&spectrum, sigma2, method, settings)?;
    let pvalues: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
    Ok((decide(&pvalues, rule, settings.alpha)?, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_rule_examples() {
        assert_eq!(simple_stop(&[0.001, 0.8, 0.01, 0.9], 0.05).unwrap(), 3);
        assert_eq!(simple_stop(&[0.2, 0.8, 0.3], 0.05).unwrap(), 0);
        assert_eq!(simple_stop(&[0.0; 4], 0.05).unwrap(), 4);
        assert!(simple_stop(&[], 0.05).is_err());
    }

    #[test]
    fn strong_rule_examples() {
        let d = strong_stop_decision(&[0.001, 0.8, 0.9, 0.95], 0.05).unwrap();
        assert_eq!(d.kappa_hat, 1);
        assert!((d.tail_statistics[0] - (-7.0673_f64).exp()).abs() < 1e-6);
        assert!((d.tail_statistics[1] - 0.8526).abs() < 1e-4);
        for (t, w) in d.per_step_thresholds.iter().zip([0.0125, 0.025, 0.0375, 0.05]) {
            assert!((t - w).abs() < 1e-15);
        }
        assert_eq!(strong_stop(&[0.0; 4], 0.05).unwrap(), 4);
        assert_eq!(strong_stop(&[1.0; 4], 0.05).unwrap(), 0);
    }

    #[test]
    fn zero_pvalue_short_circuits() {
        assert_eq!(strong_stop(&[0.5, 0.0, 0.9], 0.05).unwrap(), 2);
    }

    proptest! {
        #[test]
        fn strong_rule_is_monotone_in_alpha(
            p in proptest::collection::vec(0.0f64..=1.0, 1..12),
            a in 0.001f64..0.5,
            b in 0.001f64..0.5,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(strong_stop(&p, lo).unwrap() <= strong_stop(&p, hi).unwrap());
        }
    }
}
