//! Asymptotic comparison tests: the Tracy–Widom pseudorank test and the
//! likelihood-ratio test for equal trailing eigenvalues.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::exact::{check_spectrum, check_step, Method, TestOutcome};
use crate::special::{chi2_sf, chi2_upper_quantile, Pchip};

const TW1_TABLE: &str = include_str!("../data/tw1.txt");

/// Order-1 Tracy–Widom distribution function on a fixed probability grid.
#[derive(Debug, Clone)]
pub struct TracyWidomTable {
    probs: Vec<f64>,
    thresholds: Vec<f64>,
    quantile: Pchip,
    cdf: Pchip,
}

impl TracyWidomTable {
    /// Parses `probability threshold` rows; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut probs = Vec::new();
        let mut thresholds = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(p)), Some(Ok(s)), None) => {
                    probs.push(p);
                    thresholds.push(s);
                }
                _ => {
                    return Err(Error::Internal(format!(
                        "Tracy-Widom table line {}: expected two numbers",
                        lineno + 1
                    )))
                }
            }
        }
        if probs.len() < 40 {
            return Err(Error::Internal("Tracy-Widom table has fewer than 40 rows".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&probs) || !increasing(&thresholds) {
            return Err(Error::Internal("Tracy-Widom table is not monotone".into()));
        }
        if probs[0] <= 0.0 || probs[probs.len() - 1] >= 1.0 {
            return Err(Error::Internal("Tracy-Widom table probabilities must lie in (0, 1)".into()));
        }
        Ok(Self {
            quantile: Pchip::new(probs.clone(), thresholds.clone())?,
            cdf: Pchip::new(thresholds.clone(), probs.clone())?,
            probs,
            thresholds,
        })
    }

    /// The embedded table.
    pub fn embedded() -> &'static TracyWidomTable {
        static TABLE: OnceLock<TracyWidomTable> = OnceLock::new();
        TABLE.get_or_init(|| TracyWidomTable::parse(TW1_TABLE).expect("embedded Tracy-Widom table is valid"))
    }

    pub fn probability_range(&self) -> (f64, f64) {
        (self.probs[0], self.probs[self.probs.len() - 1])
    }

    pub fn threshold_range(&self) -> (f64, f64) {
        (self.thresholds[0], self.thresholds[self.thresholds.len() - 1])
    }

    /// Upper `alpha` quantile `s(alpha)`, i.e. `F1^{-1}(1 - alpha)`.
    pub fn upper_quantile(&self, alpha: f64) -> Result<f64> {
        let (lo, hi) = self.probability_range();
        let prob = 1.0 - alpha;
        if !(prob >= lo - 1e-12 && prob <= hi + 1e-12) {
            return Err(Error::param(format!(
                "alpha {alpha} outside the tabulated range [{:.3}, {:.3}]",
                1.0 - hi,
                1.0 - lo
            )));
        }
        Ok(self.quantile.eval(prob))
    }

    /// `F1(s)` and whether `s` was clamped to the table boundary.
    pub fn cdf(&self, s: f64) -> (f64, bool) {
        let (lo, hi) = self.threshold_range();
        (self.cdf.eval(s), !(lo..=hi).contains(&s))
    }
}

pub fn tw1_quantile(alpha: f64) -> Result<f64> {
    TracyWidomTable::embedded().upper_quantile(alpha)
}

pub fn tw1_cdf(s: f64) -> f64 {
    TracyWidomTable::embedded().cdf(s).0
}

/// Centering `(sqrt(N - 1/2) + sqrt(p - 1/2))^2`.
pub fn tw_center(n: usize, p: usize) -> f64 {
    let a = (n as f64 - 0.5).sqrt() + (p as f64 - 0.5).sqrt();
    a * a
}

/// Scale `(sqrt(N - 1/2) + sqrt(p - 1/2)) (1/sqrt(N - 1/2) + 1/sqrt(p - 1/2))^{1/3}`.
pub fn tw_scale(n: usize, p: usize) -> f64 {
    let (a, b) = ((n as f64 - 0.5).sqrt(), (p as f64 - 0.5).sqrt());
    (a + b) * (1.0 / a + 1.0 / b).cbrt()
}

/// Pseudorank step test. After removing `k - 1` components the remaining
/// block has `p - k + 1` columns, which sets the centering and scale.
pub fn pseudorank_test(values: &[f64], n: usize, k: usize, sigma2: f64, alpha: f64) -> Result<TestOutcome> {
    check_spectrum(values, n)?;
    check_step(k, values.len())?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::param(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let q = values.len() - k + 1;
    let (mu, scale) = (tw_center(n, q), tw_scale(n, q));
    let dk = values[k - 1];
    let statistic = (dk * dk / sigma2 - mu) / scale;
    let table = TracyWidomTable::embedded();
    let (cdf, clamped) = table.cdf(statistic);
    let p_value = (1.0 - cdf).clamp(0.0, 1.0);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("tw_center".to_string(), mu);
    diagnostics.insert("tw_scale".to_string(), scale);
    Ok(TestOutcome {
        k,
        method: Method::Pseudorank,
        p_value,
        statistic,
        sigma2_used: Some(sigma2),
        rejected: statistic > table.upper_quantile(alpha)?,
        diagnostics,
        flags: if clamped {
            vec!["tw_table_clamped".to_string()]
        } else {
            Vec::new()
        },
    })
}

/// Likelihood-ratio test of equal trailing eigenvalues, in the printed
/// form including the `(N - 1)^{q - 1}` factor.
pub fn muirhead_test(values: &[f64], n: usize, k: usize, alpha: f64) -> Result<TestOutcome> {
    check_spectrum(values, n)?;
    check_step(k, values.len())?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p = values.len();
    let q = p - k + 1;
    let qf = q as f64;
    let trailing_sq: Vec<f64> = values[k - 1..].iter().map(|d| d * d).collect();
    let lbar = trailing_sq.iter().sum::<f64>() / qf;
    if lbar <= 0.0 {
        return Err(Error::Degenerate("trailing singular values are all zero".into()));
    }
    let log_v = (qf - 1.0) * (n as f64 - 1.0).ln() + trailing_sq.iter().map(|v| v.ln()).sum::<f64>()
        - qf * lbar.ln();
    let mut correction = 0.0;
    for d in &values[..k - 1] {
        let gap = d * d - lbar;
        if gap == 0.0 {
            return Err(Error::Degenerate(format!(
                "leading squared singular value equals the trailing mean {lbar}"
            )));
        }
        correction += lbar * lbar / (gap * gap);
    }
    let factor = n as f64 - k as f64 - (2.0 * qf * qf + qf + 2.0) / (6.0 * qf) + correction;
    let statistic = if log_v == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        -factor * log_v
    };
    let df = (qf + 2.0) * (qf - 1.0) / 2.0;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi2_sf(statistic, df) };
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("log_v".to_string(), log_v);
    diagnostics.insert("chi2_df".to_string(), df);
    Ok(TestOutcome {
        k,
        method: Method::Muirhead,
        p_value,
        statistic,
        sigma2_used: None,
        rejected: statistic > chi2_upper_quantile(alpha, df)?,
        diagnostics,
        flags: Vec::new(),
    })
}
