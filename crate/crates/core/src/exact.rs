//! The conditional singular value (CSV) statistic, step-wise p-values and
//! exact confidence intervals for `<U_k V_k^T, B>`.
//!
//! For step `k` the statistic is the conditional survival function of the
//! `k`-th singular value given all others,
//!
//! ```text
//! S_{k,delta} = int_{d_k}^{d_{k-1}} w(z) dz / int_{d_{k+1}}^{d_{k-1}} w(z) dz,
//! w(z) = exp(-(z - delta)^2 / 2 sigma^2) z^{N-p} prod_{j != k} |z^2 - d_j^2|
//! ```
//!
//! with `d_0 = inf`. The denominator is evaluated as the sum of the
//! numerator and the complementary piece on `(d_{k+1}, d_k)`, so both
//! `S` and `1 - S` are available without cancellation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{muirhead_test, pseudorank_test};
use crate::error::{Error, Result};
use crate::icsv::{icsv_statistic_values, ISConfig};
use crate::quadrature::{integrate_log, QuadratureConfig};
use crate::spectra::{CsvIntegrand, LogMagnitude, SingularSpectrum};

/// Which step test produced a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Csv,
    Icsv,
    Pseudorank,
    Muirhead,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Csv, Method::Icsv, Method::Pseudorank, Method::Muirhead];

    pub fn needs_sigma2(self) -> bool {
        !matches!(self, Method::Muirhead)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Csv => "csv",
            Method::Icsv => "icsv",
            Method::Pseudorank => "pseudorank",
            Method::Muirhead => "muirhead",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Method::Csv),
            "icsv" => Ok(Method::Icsv),
            "pseudorank" => Ok(Method::Pseudorank),
            "muirhead" => Ok(Method::Muirhead),
            other => Err(Error::param(format!("unknown method '{other}'"))),
        }
    }
}

/// One step test's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub k: usize,
    pub method: Method,
    pub p_value: f64,
    /// Method specific: the survival ratio for csv/icsv, the standardized
    /// top value for pseudorank, the likelihood-ratio statistic for muirhead.
    pub statistic: f64,
    pub sigma2_used: Option<f64>,
    pub rejected: bool,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Numerical settings shared by the step tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub quadrature: QuadratureConfig,
    pub importance: ISConfig,
    pub alpha: f64,
}

impl Default for TestSettings {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            importance: ISConfig::default(),
            alpha: 0.05,
        }
    }
}

/// The two pieces of the CSV integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvValue {
    /// log of the integral over `(d_k, d_{k-1})`.
    pub upper_part: LogMagnitude,
    /// log of the integral over `(d_{k+1}, d_k)`.
    pub lower_part: LogMagnitude,
    pub degenerate: bool,
    pub achieved_rel_tol: f64,
}

impl CsvValue {
    /// `S_{k,delta}`.
    pub fn survival(&self) -> f64 {
        let total = self.upper_part + self.lower_part;
        if total.is_zero() {
            return 0.0;
        }
        self.upper_part.ratio(total).clamp(0.0, 1.0)
    }

    /// `1 - S_{k,delta}`, computed without cancellation.
    pub fn complement(&self) -> f64 {
        let total = self.upper_part + self.lower_part;
        if total.is_zero() {
            return 1.0;
        }
        self.lower_part.ratio(total).clamp(0.0, 1.0)
    }
}

pub(crate) fn check_spectrum(values: &[f64], n: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input("singular values must be finite and nonnegative"));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::input("singular values must be sorted in decreasing order"));
    }
    if n < values.len() {
        return Err(Error::param(format!(
            "rows N={n} fewer than columns p={}",
            values.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_step(k: usize, p: usize) -> Result<()> {
    if k == p && p > 0 {
        return Err(Error::Unsupported(format!(
            "step k = p = {p} is not testable (full-rank alternative)"
        )));
    }
    if k == 0 || k >= p {
        return Err(Error::param(format!("step k={k} outside 1..={}", p.saturating_sub(1))));
    }
    Ok(())
}

/// `S_{k,delta}` from raw singular values of an `n`-row matrix (`k` 1-based).
pub fn csv_value(
    values: &[f64],
    n: usize,
    k: usize,
    delta: f64,
    sigma2: f64,
    cfg: &QuadratureConfig,
) -> Result<CsvValue> {
    check_spectrum(values, n)?;
    check_step(k, values.len())?;
    if !delta.is_finite() {
        return Err(Error::param("delta must be finite"));
    }
    let integrand = CsvIntegrand::new(values, k, delta, sigma2, n)?;
    let upper = if k == 1 { f64::INFINITY } else { values[k - 2] };
    let dk = values[k - 1];
    let lower = values[k];

    if dk >= upper {
        return Ok(CsvValue {
            upper_part: LogMagnitude::ZERO,
            lower_part: LogMagnitude::ONE,
            degenerate: true,
            achieved_rel_tol: 0.0,
        });
    }
    if dk <= lower {
        return Ok(CsvValue {
            upper_part: LogMagnitude::ONE,
            lower_part: LogMagnitude::ZERO,
            degenerate: true,
            achieved_rel_tol: 0.0,
        });
    }
    let f = |z: f64| integrand.log_at(z);
    let a = integrate_log(f, dk, upper, cfg)?;
    let c = integrate_log(f, lower, dk, cfg)?;
    Ok(CsvValue {
        upper_part: a.value,
        lower_part: c.value,
        degenerate: false,
        achieved_rel_tol: a.achieved_rel_tol.max(c.achieved_rel_tol),
    })
}

/// `S_{k,delta}` for an observed spectrum.
pub fn csv_statistic(
    spectrum: &SingularSpectrum,
    k: usize,
    delta: f64,
    sigma2: f64,
    cfg: &QuadratureConfig,
) -> Result<CsvValue> {
    csv_value(spectrum.values(), spectrum.rows(), k, delta, sigma2, cfg)
}

/// The CSV step test (`delta = 0`) packaged as an outcome.
pub fn csv_test(
    values: &[f64],
    n: usize,
    k: usize,
    sigma2: f64,
    settings: &TestSettings,
) -> Result<TestOutcome> {
    let v = csv_value(values, n, k, 0.0, sigma2, &settings.quadrature)?;
    let p = v.survival();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("quadrature_rel_tol".to_string(), v.achieved_rel_tol);
    Ok(TestOutcome {
        k,
        method: Method::Csv,
        p_value: p,
        statistic: p,
        sigma2_used: Some(sigma2),
        rejected: p <= settings.alpha,
        diagnostics,
        flags: if v.degenerate {
            vec!["degenerate_interval".to_string()]
        } else {
            Vec::new()
        },
    })
}

/// One test for step `k` by the chosen method.
pub fn step_test(
    values: &[f64],
    n: usize,
    k: usize,
    sigma2: Option<f64>,
    method: Method,
    settings: &TestSettings,
) -> Result<TestOutcome> {
    let need = || {
        sigma2.ok_or_else(|| Error::param(format!("method {method} requires a noise level sigma2")))
    };
    match method {
        Method::Csv => csv_test(values, n, k, need()?, settings),
        Method::Icsv => icsv_statistic_values(values, n, k, need()?, &settings.importance),
        Method::Pseudorank => pseudorank_test(values, n, k, need()?, settings.alpha),
        Method::Muirhead => muirhead_test(values, n, k, settings.alpha),
    }
}

/// p-values for steps `k = 1 .. p-1`.
pub fn sequential_pvalues(
    spectrum: &SingularSpectrum,
    sigma2: Option<f64>,
    method: Method,
    settings: &TestSettings,
) -> Result<Vec<TestOutcome>> {
    sequential_pvalues_values(spectrum.values(), spectrum.rows(), sigma2, method, settings)
}

pub fn sequential_pvalues_values(
    values: &[f64],
    n: usize,
    sigma2: Option<f64>,
    method: Method,
    settings: &TestSettings,
) -> Result<Vec<TestOutcome>> {
    let p = values.len();
    if p < 2 {
        return Err(Error::param("at least two columns are needed for a step test"));
    }
    (1..p)
        .map(|k| step_test(values, n, k, sigma2, method, settings))
        .collect()
}

/// Equal-tailed interval for `<U_k V_k^T, B>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub k: usize,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub target: String,
    /// `S_{k,delta}` at the returned endpoints.
    pub survival_at_lower: f64,
    pub survival_at_upper: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Root of an increasing function by bracketing and bisection.
fn bisect_increasing<F: FnMut(f64) -> Result<f64>>(
    mut g: F,
    center: f64,
    half_width: f64,
    tol: f64,
) -> Result<f64> {
    let mut step = half_width;
    let mut lo = center - step;
    let mut hi = center + step;
    let mut glo = g(lo)?;
    let mut ghi = g(hi)?;
    let mut expansions = 0;
    while glo > 0.0 || ghi < 0.0 {
        if expansions >= 60 {
            return Err(Error::Numerical {
                message: format!("could not bracket interval endpoint within [{lo}, {hi}]"),
                estimate: f64::NAN,
                achieved: f64::INFINITY,
            });
        }
        step *= 2.0;
        if glo > 0.0 {
            hi = lo;
            ghi = glo;
            lo -= step;
            glo = g(lo)?;
        } else {
            lo = hi;
            glo = ghi;
            hi += step;
            ghi = g(hi)?;
        }
        expansions += 1;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `{delta : min(S_{k,delta}, 1 - S_{k,delta}) > (1 - level) / 2}` from raw values.
pub fn confidence_interval_values(
    values: &[f64],
    n: usize,
    k: usize,
    sigma2: f64,
    level: f64,
    cfg: &QuadratureConfig,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(format!("level must lie in (0, 1), got {level}")));
    }
    check_spectrum(values, n)?;
    check_step(k, values.len())?;
    let tail = 0.5 * (1.0 - level);
    let sigma = sigma2.sqrt();
    let tol = 1e-6 * sigma;
    let dk = values[k - 1];

    // S increases in delta: the lower endpoint solves S = tail and the
    // upper endpoint solves 1 - S = tail.
    let lower = bisect_increasing(
        |d| Ok(csv_value(values, n, k, d, sigma2, cfg)?.survival() - tail),
        dk,
        10.0 * sigma,
        tol,
    )?;
    let upper = bisect_increasing(
        |d| Ok(tail - csv_value(values, n, k, d, sigma2, cfg)?.complement()),
        dk,
        10.0 * sigma,
        tol,
    )?;
    Ok(ConfidenceInterval {
        k,
        level,
        lower,
        upper,
        target: format!("<U_{k} V_{k}^T, B>"),
        survival_at_lower: csv_value(values, n, k, lower, sigma2, cfg)?.survival(),
        survival_at_upper: csv_value(values, n, k, upper, sigma2, cfg)?.survival(),
    })
}

pub fn confidence_interval(
    spectrum: &SingularSpectrum,
    k: usize,
    sigma2: f64,
    level: f64,
    cfg: &QuadratureConfig,
) -> Result<ConfidenceInterval> {
    confidence_interval_values(spectrum.values(), spectrum.rows(), k, sigma2, level, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{svd_full, ObservedMatrix};
    use nalgebra::DMatrix;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    /// Brute-force trapezoid on a fine uniform grid, in shifted linear space.
    fn trapezoid_log(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let vals: Vec<f64> = (0..=n).map(|i| f(a + h * i as f64)).collect();
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (i, v) in vals.iter().enumerate() {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * (v - m).exp();
        }
        m + (s * h).ln()
    }

    #[test]
    fn spot_numerator_matches_trapezoid() {
        let d = [6.0, 4.0, 2.0];
        let integrand = CsvIntegrand::new(&d, 2, 0.0, 1.0, 5).unwrap();
        let got = integrate_log(|z| integrand.log_at(z), 4.0, 6.0, &q()).unwrap();
        let want = trapezoid_log(|z| integrand.log_at(z), 4.0, 6.0, 1_000_000);
        assert!(((got.value.ln() - want) / want).abs() < 1e-6);
    }

    #[test]
    fn coincident_lower_limit_gives_one() {
        let v = csv_value(&[5.0, 3.0, 3.0, 1.0], 6, 2, 0.0, 1.0, &q()).unwrap();
        assert_eq!(v.survival(), 1.0);
        assert!(v.degenerate);
    }

    #[test]
    fn empty_numerator_gives_zero() {
        let v = csv_value(&[5.0, 5.0, 3.0, 1.0], 6, 2, 0.0, 1.0, &q()).unwrap();
        assert_eq!(v.survival(), 0.0);
        assert!(v.degenerate);
    }

    #[test]
    fn last_step_is_unsupported() {
        let err = csv_value(&[3.0, 2.0, 1.0], 5, 3, 0.0, 1.0, &q()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn zero_matrix_is_flagged_at_every_step() {
        let s = svd_full(&ObservedMatrix::new(DMatrix::zeros(6, 4)).unwrap()).unwrap();
        let out = sequential_pvalues(&s, Some(1.0), Method::Csv, &TestSettings::default()).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert!(o.flags.iter().any(|f| f == "degenerate_interval"));
        }
    }

    #[test]
    fn survival_is_increasing_in_delta() {
        let d = [9.5, 7.0, 5.5, 4.0, 2.5];
        for k in 1..4 {
            let mut prev = -1.0;
            for i in -20..=20 {
                let delta = d[k - 1] + 0.5 * i as f64;
                let s = csv_value(&d, 12, k, delta, 1.0, &q()).unwrap().survival();
                assert!(s > prev || (s == 1.0 && prev == 1.0), "k={k} delta={delta}");
                prev = s;
            }
        }
    }

    #[test]
    fn scale_invariance() {
        let d = [9.5, 7.0, 5.5, 4.0, 2.5];
        for k in 1..4 {
            let base = csv_value(&d, 12, k, 1.5, 1.3, &q()).unwrap().survival();
            for c in [0.1, 10.0] {
                let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
                let s = csv_value(&scaled, 12, k, 1.5 * c, 1.3 * c * c, &q()).unwrap().survival();
                assert!((s - base).abs() <= 2.0 * q().rel_tol + 1e-12, "k={k} c={c}");
            }
        }
    }

    #[test]
    fn ci_endpoints_solve_defining_equations() {
        let d = [12.0, 8.0, 6.5, 5.0, 3.0, 1.0];
        let ci = confidence_interval_values(&d, 20, 1, 1.0, 0.95, &q()).unwrap();
        assert!((ci.survival_at_lower - 0.025).abs() <= 1e-4);
        assert!((ci.survival_at_upper - 0.975).abs() <= 1e-4);
        assert!(ci.lower < ci.upper);
    }

    #[test]
    fn wider_level_gives_wider_interval() {
        let d = [12.0, 8.0, 6.5, 5.0, 3.0, 1.0];
        for k in [1, 2] {
            let a = confidence_interval_values(&d, 20, k, 1.0, 0.90, &q()).unwrap();
            let b = confidence_interval_values(&d, 20, k, 1.0, 0.99, &q()).unwrap();
            assert!(b.lower < a.lower && a.upper < b.upper);
        }
    }

    #[test]
    fn method_round_trips_through_strings() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
