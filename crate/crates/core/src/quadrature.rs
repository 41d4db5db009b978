//! Adaptive Gauss–Legendre quadrature carried out entirely in log space.
//!
//! The conditional-test integrands span thousands of nats, so every panel
//! sum is accumulated with an exponent shift and the global estimate is a
//! log-sum-exp over panels. Panels are refined greedily (largest estimated
//! error first) until the summed error falls below `rel_tol` times the
//! running total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::LogMagnitude;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes_per_panel: usize,
    pub max_panels: usize,
    pub rel_tol: f64,
    /// Truncation depth for infinite upper limits, in nats below the
    /// running maximum of the log-integrand.
    pub tail_drop_nats: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_panel: 10,
            max_panels: 4000,
            rel_tol: 1e-10,
            tail_drop_nats: 46.0,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 4 {
            return Err(Error::param("nodes_per_panel must be >= 4"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-3) {
            return Err(Error::param("rel_tol must lie in (0, 1e-3]"));
        }
        if !(self.tail_drop_nats >= 30.0) {
            return Err(Error::param("tail_drop_nats must be >= 30"));
        }
        if self.max_panels == 0 {
            return Err(Error::param("max_panels must be positive"));
        }
        Ok(())
    }
}

/// Result of a log-domain integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogIntegral {
    pub value: LogMagnitude,
    /// Estimated relative error of `value`.
    pub achieved_rel_tol: f64,
    pub panels: usize,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

struct Rule {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self {
            nodes,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        }
    }

    fn panel<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, buf: &mut Vec<f64>) -> LogMagnitude {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        buf.clear();
        let mut max = f64::NEG_INFINITY;
        for (t, lw) in self.nodes.iter().zip(&self.log_weights) {
            let v = f(mid + half * t) + lw;
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            max = max.max(v);
            buf.push(v);
        }
        if max == f64::NEG_INFINITY {
            return LogMagnitude::ZERO;
        }
        let s: f64 = buf.iter().map(|v| (v - max).exp()).sum();
        LogMagnitude::from_log(max + s.ln() + half.ln())
    }
}

struct Panel {
    a: f64,
    b: f64,
    coarse: LogMagnitude,
    left: LogMagnitude,
    right: LogMagnitude,
}

impl Panel {
    fn fine(&self) -> LogMagnitude {
        self.left + self.right
    }

    fn err(&self) -> LogMagnitude {
        self.coarse.abs_diff(self.fine())
    }
}

/// Places breakpoints on `[lower, inf)` out to the point where the
/// log-integrand has fallen `drop` nats below its running maximum past
/// the maximizer. Step sizes double so that both narrow and wide peaks are
/// bracketed.
fn scan_tail<F: Fn(f64) -> f64>(logf: &F, lower: f64, drop: f64) -> Result<Vec<f64>> {
    let mut h = if lower > 0.0 { 1e-2 * lower } else { 1e-3 };
    let mut pts = vec![lower];
    let mut best = f64::NEG_INFINITY;
    let mut best_at = lower;
    let mut x = lower;
    for _ in 0..2000 {
        x += h;
        h *= 2.0;
        if !x.is_finite() {
            break;
        }
        pts.push(x);
        let v = logf(x);
        if v > best {
            best = v;
            best_at = x;
        }
        if best > f64::NEG_INFINITY && x > best_at && v < best - drop {
            return Ok(pts);
        }
    }
    Err(Error::Numerical {
        message: "could not locate a truncation point for the infinite upper limit".into(),
        estimate: f64::NAN,
        achieved: f64::INFINITY,
    })
}

/// Log of `int_lower^upper exp(logf(z)) dz`. `upper` may be `f64::INFINITY`.
pub fn integrate_log<F: Fn(f64) -> f64>(
    logf: F,
    lower: f64,
    upper: f64,
    cfg: &QuadratureConfig,
) -> Result<LogIntegral> {
    cfg.validate()?;
    if !(lower < upper) || lower.is_nan() || !lower.is_finite() {
        return Err(Error::param(format!(
            "integration limits must satisfy lower < upper, got [{lower}, {upper}]"
        )));
    }
    let breaks = if upper.is_infinite() {
        scan_tail(&logf, lower, cfg.tail_drop_nats)?
    } else {
        let pieces = 8;
        (0..=pieces)
            .map(|i| lower + (upper - lower) * i as f64 / pieces as f64)
            .collect()
    };

    let rule = Rule::new(cfg.nodes_per_panel);
    let mut buf = Vec::with_capacity(cfg.nodes_per_panel);
    let mut make = |a: f64, b: f64, coarse: Option<LogMagnitude>| {
        let m = 0.5 * (a + b);
        let coarse = coarse.unwrap_or_else(|| rule.panel(&logf, a, b, &mut buf));
        let left = rule.panel(&logf, a, m, &mut buf);
        let right = rule.panel(&logf, m, b, &mut buf);
        Panel {
            a,
            b,
            coarse,
            left,
            right,
        }
    };

    let mut panels: Vec<Panel> = breaks.windows(2).map(|w| make(w[0], w[1], None)).collect();
    let log_tol = cfg.rel_tol.ln();
    loop {
        let total: LogMagnitude = panels.iter().map(Panel::fine).sum();
        let err: LogMagnitude = panels.iter().map(Panel::err).sum();
        let achieved = if total.is_zero() {
            if err.is_zero() {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            err.ratio(total)
        };
        if total.is_zero() && err.is_zero() || (!total.is_zero() && err.ln() <= log_tol + total.ln())
        {
            return Ok(LogIntegral {
                value: total,
                achieved_rel_tol: achieved,
                panels: panels.len(),
            });
        }
        if panels.len() >= cfg.max_panels {
            return Err(Error::Numerical {
                message: format!("quadrature did not converge within {} panels", cfg.max_panels),
                estimate: total.ln(),
                achieved,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.err().partial_cmp(&y.err()).unwrap())
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            // interval exhausted at floating point resolution
            return Err(Error::Numerical {
                message: "quadrature panel collapsed below floating point resolution".into(),
                estimate: total.ln(),
                achieved,
            });
        }
        panels.push(make(p.a, m, Some(p.left)));
        panels.push(make(m, p.b, Some(p.right)));
    }
}
