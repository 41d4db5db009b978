//! Noise-level estimators: residual variance after nuclear-norm shrinkage
//! with a cross-validated penalty, the Marchenko–Pastur median estimator,
//! and the known-rank tail average.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::spectra::{singular_values, ObservedMatrix, SingularSpectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariant {
    Simple,
    Lambda,
    LambdaDf,
    LambdaDfC,
    Median,
}

impl fmt::Display for NoiseVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseVariant::Simple => "simple",
            NoiseVariant::Lambda => "cv",
            NoiseVariant::LambdaDf => "cv-df",
            NoiseVariant::LambdaDfC => "cv-dfc",
            NoiseVariant::Median => "median",
        })
    }
}

impl FromStr for NoiseVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "simple" => Ok(NoiseVariant::Simple),
            "cv" | "lambda" => Ok(NoiseVariant::Lambda),
            "cv-df" | "lambda-df" => Ok(NoiseVariant::LambdaDf),
            "cv-dfc" | "lambda-df-c" => Ok(NoiseVariant::LambdaDfC),
            "median" | "med" => Ok(NoiseVariant::Median),
            other => Err(Error::param(format!("unknown noise estimator '{other}'"))),
        }
    }
}

/// An estimate of `sigma^2` together with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub sigma2: f64,
    pub variant: NoiseVariant,
    pub lambda_used: Option<f64>,
    pub df: Option<usize>,
    pub c: Option<f64>,
    pub cv_folds: Option<usize>,
    pub kappa: Option<usize>,
}

impl NoiseEstimate {
    fn bare(sigma2: f64, variant: NoiseVariant) -> Self {
        Self {
            sigma2,
            variant,
            lambda_used: None,
            df: None,
            c: None,
            cv_folds: None,
            kappa: None,
        }
    }
}

/// Thin factorization used by the shrinkage routines: `X = X V diag(1/d) diag(d) V^T`.
/// Working through the `p x p` Gram matrix keeps each SVD at `O(N p^2)`.
struct GramSvd {
    values: Vec<f64>,
    right: DMatrix<f64>,
}

impl GramSvd {
    fn new(x: &DMatrix<f64>) -> Self {
        let gram = x.transpose() * x;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
        let right = DMatrix::from_fn(x.ncols(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, right }
    }

    /// `U diag(s) V^T` for shrunken values `s`, as `X V diag(s/d) V^T`.
    fn shrink(&self, x: &DMatrix<f64>, lambda: f64, rank_cap: Option<usize>) -> (DMatrix<f64>, Vec<f64>) {
        let cap = rank_cap.unwrap_or(usize::MAX);
        let shrunk: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &d)| if i < cap { (d - lambda).max(0.0) } else { 0.0 })
            .collect();
        let keep: Vec<usize> = (0..shrunk.len()).filter(|&i| shrunk[i] > 0.0).collect();
        if keep.is_empty() {
            return (DMatrix::zeros(x.nrows(), x.ncols()), shrunk);
        }
        let v = DMatrix::from_fn(x.ncols(), keep.len(), |r, c| self.right[(r, keep[c])]);
        let mut scaled = v.clone();
        for (c, &i) in keep.iter().enumerate() {
            let f = shrunk[i] / self.values[i];
            scaled.column_mut(c).scale_mut(f);
        }
        (x * (scaled * v.transpose()), shrunk)
    }
}

/// The soft-thresholded fit and its nonzero-value count.
#[derive(Debug, Clone)]
pub struct ShrinkageFit {
    pub fit: DMatrix<f64>,
    pub df: usize,
    /// Shrunken singular values `max(d_i - lambda, 0)`.
    pub values: Vec<f64>,
}

/// `U diag(max(d - lambda, 0)) V^T` and `df = #{d_i > lambda}`.
pub fn soft_threshold_svd(y: &DMatrix<f64>, lambda: f64) -> Result<ShrinkageFit> {
    soft_threshold_svd_capped(y, lambda, None)
}

/// As [`soft_threshold_svd`], keeping at most `rank_cap` components.
pub fn soft_threshold_svd_capped(y: &DMatrix<f64>, lambda: f64, rank_cap: Option<usize>) -> Result<ShrinkageFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (x, transposed) = if y.nrows() < y.ncols() {
        (y.transpose(), true)
    } else {
        (y.clone(), false)
    };
    let mut svd = GramSvd::new(&x);
    // threshold against the directly computed values so df and the fit agree at d_i = lambda
    svd.values = singular_values(&x);
    let (mut fit, values) = svd.shrink(&x, lambda, rank_cap);
    let df = values.iter().filter(|&&s| s > 0.0).count();
    if transposed {
        fit = fit.transpose();
    }
    Ok(ShrinkageFit { fit, df, values })
}

/// A matrix with a pattern of observed entries.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    base: DMatrix<f64>,
    observed: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(base: DMatrix<f64>, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != base.len() {
            return Err(Error::param("mask shape does not match the matrix"));
        }
        Ok(Self { base, observed })
    }

    pub fn fully_observed(base: DMatrix<f64>) -> Self {
        let n = base.len();
        Self {
            base,
            observed: vec![true; n],
        }
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Column-major flags, matching `DMatrix` storage order.
    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    /// True when every row and every column has an observed entry.
    pub fn covers_rows_and_columns(&self) -> bool {
        let (n, p) = self.base.shape();
        let mut rows = vec![false; n];
        let mut cols = vec![false; p];
        for j in 0..p {
            for i in 0..n {
                if self.observed[j * n + i] {
                    rows[i] = true;
                    cols[j] = true;
                }
            }
        }
        rows.iter().all(|&r| r) && cols.iter().all(|&c| c)
    }

    /// `1/2 ||P_obs(Y - B)||_F^2 + lambda ||B||_*`.
    pub fn objective(&self, b: &DMatrix<f64>, lambda: f64) -> f64 {
        let mut rss = 0.0;
        for (idx, (y, f)) in self.base.iter().zip(b.iter()).enumerate() {
            if self.observed[idx] {
                rss += (y - f) * (y - f);
            }
        }
        0.5 * rss + lambda * singular_values(b).iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftImputeConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest rank kept by each shrinkage step; `None` for the exact prox.
    pub rank_cap: Option<usize>,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            rank_cap: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SoftImputeResult {
    pub fit: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    /// Objective after each iteration, when requested.
    pub objective_trace: Vec<f64>,
}

fn impute_step(masked: &MaskedMatrix, current: &DMatrix<f64>, lambda: f64, rank_cap: Option<usize>) -> DMatrix<f64> {
    let mut filled = current.clone();
    for (idx, v) in filled.iter_mut().enumerate() {
        if masked.observed[idx] {
            *v = masked.base[idx];
        }
    }
    let svd = GramSvd::new(&filled);
    svd.shrink(&filled, lambda, rank_cap).0
}

/// Fixed-point iteration `B <- shrink(P_obs(Y) + P_obs^c(B), lambda)`.
pub fn soft_impute(
    masked: &MaskedMatrix,
    lambda: f64,
    warm_start: Option<&DMatrix<f64>>,
    cfg: &SoftImputeConfig,
    track_objective: bool,
) -> Result<SoftImputeResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    let transposed = masked.base.nrows() < masked.base.ncols();
    if transposed {
        return Err(Error::param("soft_impute expects rows >= columns"));
    }
    let mut b = match warm_start {
        Some(w) if w.shape() == masked.base.shape() => w.clone(),
        Some(_) => return Err(Error::param("warm start has the wrong shape")),
        None => DMatrix::zeros(masked.base.nrows(), masked.base.ncols()),
    };
    let mut trace = Vec::new();
    let mut change = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let next = impute_step(masked, &b, lambda, cfg.rank_cap);
        let prev_norm = b.norm();
        let diff = (&next - &b).norm();
        change = if prev_norm > 0.0 {
            diff / prev_norm
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        b = next;
        if track_objective {
            trace.push(masked.objective(&b, lambda));
        }
        if change <= cfg.tol || (b.norm() == 0.0 && prev_norm == 0.0) {
            return Ok(SoftImputeResult {
                fit: b,
                iterations: it,
                converged: true,
                final_change: change,
                objective_trace: trace,
            });
        }
    }
    Ok(SoftImputeResult {
        fit: b,
        iterations: cfg.max_iter,
        converged: false,
        final_change: change,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_points: usize,
    /// Smallest grid value as a fraction of `d_1`.
    pub grid_floor: f64,
    pub c: f64,
    /// Solver settings for the held-out fits.
    pub impute: SoftImputeConfig,
    /// Rank cap of the final fit at the selected `lambda`.
    #[serde(default)]
    pub final_rank_cap: Option<usize>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 20,
            grid_points: 100,
            grid_floor: 1e-3,
            c: 2.0 / 3.0,
            impute: SoftImputeConfig {
                rank_cap: Some(2),
                ..SoftImputeConfig::default()
            },
            final_rank_cap: None,
        }
    }
}

/// `grid_points` log-spaced values from `d_1` down to `d_1 * grid_floor`.
pub fn lambda_grid(d1: f64, cfg: &CvConfig) -> Vec<f64> {
    let n = cfg.grid_points.max(1);
    if n == 1 {
        return vec![d1];
    }
    let step = cfg.grid_floor.ln() / (n - 1) as f64;
    (0..n).map(|i| d1 * (step * i as f64).exp()).collect()
}

#[derive(Debug, Clone)]
pub struct CvSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out squared error per grid value.
    pub errors: Vec<f64>,
    pub attempts: usize,
}

/// Chooses the grid value minimizing the held-out squared error of the
/// completed matrix, over `folds` disjoint random leave-out sets.
pub fn cv_select_lambda<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    grid: &[f64],
    cfg: &CvConfig,
    rng: &mut R,
) -> Result<CvSelection> {
    if cfg.folds < 2 {
        return Err(Error::param(format!("need at least two folds, got {}", cfg.folds)));
    }
    if grid.is_empty() {
        return Err(Error::param("empty lambda grid"));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::param("lambda grid must be positive and sorted descending"));
    }
    let (n, p) = y.shape();
    if n < p {
        return Err(Error::param("cross-validation expects rows >= columns"));
    }
    if cfg.folds > n * p {
        return Err(Error::param("more folds than matrix entries"));
    }
    if grid.len() == 1 {
        return Ok(CvSelection {
            lambda: grid[0],
            grid: grid.to_vec(),
            errors: vec![f64::NAN],
            attempts: 0,
        });
    }
    let mut attempts = 0;
    let masks = loop {
        attempts += 1;
        let mut perm: Vec<usize> = (0..n * p).collect();
        perm.shuffle(rng);
        let masks: Vec<MaskedMatrix> = (0..cfg.folds)
            .map(|f| {
                let mut observed = vec![true; n * p];
                for &idx in perm.iter().skip(f).step_by(cfg.folds) {
                    observed[idx] = false;
                }
                MaskedMatrix {
                    base: y.clone(),
                    observed,
                }
            })
            .collect();
        if masks.iter().all(MaskedMatrix::covers_rows_and_columns) {
            break masks;
        }
        if attempts >= 10 {
            return Err(Error::Degenerate(
                "every random fold partition left a row or column unobserved".into(),
            ));
        }
    };
    let mut errors = vec![0.0; grid.len()];
    for mask in &masks {
        let mut warm: Option<DMatrix<f64>> = None;
        for (g, &lambda) in grid.iter().enumerate() {
            let res = soft_impute(mask, lambda, warm.as_ref(), &cfg.impute, false)?;
            let mut err = 0.0;
            for (idx, (yv, fv)) in y.iter().zip(res.fit.iter()).enumerate() {
                if !mask.observed[idx] {
                    err += (yv - fv) * (yv - fv);
                }
            }
            errors[g] += err;
            warm = Some(res.fit);
        }
    }
    for e in &mut errors {
        *e /= cfg.folds as f64;
    }
    let best = errors
        .iter()
        .enumerate()
        .fold(0, |best, (i, e)| if *e < errors[best] { i } else { best });
    Ok(CvSelection {
        lambda: grid[best],
        grid: grid.to_vec(),
        errors,
        attempts,
    })
}

/// Residual variance of the shrinkage fit at a fixed `lambda`.
pub fn sigma_hat(y: &ObservedMatrix, lambda: f64, variant: NoiseVariant, c: f64, rank_cap: Option<usize>) -> Result<NoiseEstimate> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::param(format!("c must lie in [0, 1], got {c}")));
    }
    let (n, p) = (y.rows() as f64, y.cols() as f64);
    let fit = soft_threshold_svd_capped(y.matrix(), lambda, rank_cap)?;
    let rss = (y.matrix() - &fit.fit).norm_squared();
    let df = fit.df as f64;
    let (denom, c_used) = match variant {
        NoiseVariant::Lambda => (n * p, None),
        NoiseVariant::LambdaDf => (n * (p - df), None),
        NoiseVariant::LambdaDfC => (n * (p - c * df), Some(c)),
        other => return Err(Error::param(format!("variant {other} is not a shrinkage estimator"))),
    };
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "estimator denominator is {denom} (df = {}, p = {p})",
            fit.df
        )));
    }
    let sigma2 = rss / denom;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("residual sum of squares is zero".into()));
    }
    Ok(NoiseEstimate {
        lambda_used: Some(lambda),
        df: Some(fit.df),
        c: c_used,
        ..NoiseEstimate::bare(sigma2, variant)
    })
}

/// Cross-validated `lambda` followed by [`sigma_hat`].
pub fn sigma_cv<R: Rng + ?Sized>(
    y: &ObservedMatrix,
    variant: NoiseVariant,
    cfg: &CvConfig,
    rng: &mut R,
) -> Result<(NoiseEstimate, CvSelection)> {
    let d1 = singular_values(y.matrix())[0];
    if d1 == 0.0 {
        return Err(Error::Degenerate("zero matrix has no noise scale".into()));
    }
    let grid = lambda_grid(d1, cfg);
    let sel = cv_select_lambda(y.matrix(), &grid, cfg, rng)?;
    let mut est = sigma_hat(y, sel.lambda, variant, cfg.c, cfg.final_rank_cap)?;
    est.cv_folds = Some(cfg.folds);
    Ok((est, sel))
}

/// Median of the Marchenko–Pastur law with aspect ratio `ratio = p/N`.
pub fn mp_median(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::param(format!("aspect ratio must lie in (0, 1], got {ratio}")));
    }
    if ratio < 1e-12 {
        return Ok(1.0);
    }
    let s = ratio.sqrt();
    let (a, b) = ((1.0 - s).powi(2), (1.0 + s).powi(2));
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    // with x = mid - half cos t the density becomes smooth in t on [0, pi]
    let density = |t: f64| {
        let x = mid - half * t.cos();
        half * half * t.sin().powi(2) / (2.0 * std::f64::consts::PI * ratio * x)
    };
    let (nodes, weights) = gauss_legendre(24);
    let cdf = |theta: f64| {
        let panels = 8;
        let h = theta / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let (lo, hi) = (k as f64 * h, (k + 1) as f64 * h);
            let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (x, w) in nodes.iter().zip(&weights) {
                acc += w * r * density(c + r * x);
            }
        }
        acc
    };
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    while hi - lo > 1e-12 {
        let m = 0.5 * (lo + hi);
        if cdf(m) < 0.5 {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(mid - half * (0.5 * (lo + hi)).cos())
}

/// Median of the values; the mean of the two middle entries for even length.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// `d_med^2 / (N mu)` with `mu` the Marchenko–Pastur median at ratio `p/N`.
pub fn sigma_med_values(values: &[f64], n: usize) -> Result<NoiseEstimate> {
    let p = values.len();
    if p < 2 || n < p {
        return Err(Error::param(format!("need N >= p >= 2, got N={n}, p={p}")));
    }
    let mu = mp_median(p as f64 / n as f64)?;
    let dm = median(values);
    let sigma2 = dm * dm / (n as f64 * mu);
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("median singular value is zero".into()));
    }
    Ok(NoiseEstimate::bare(sigma2, NoiseVariant::Median))
}

pub fn sigma_med(y: &ObservedMatrix) -> Result<NoiseEstimate> {
    sigma_med_values(&singular_values(y.matrix()), y.rows())
}

/// `sum_{j > kappa} d_j^2 / (N (p - kappa))`.
pub fn sigma_simple_values(values: &[f64], n: usize, kappa: usize) -> Result<NoiseEstimate> {
    let p = values.len();
    if kappa >= p {
        return Err(Error::param(format!("kappa must be below p = {p}, got {kappa}")));
    }
    let tail: f64 = values[kappa..].iter().map(|d| d * d).sum();
    let sigma2 = tail / (n as f64 * (p - kappa) as f64);
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("trailing singular values are all zero".into()));
    }
    Ok(NoiseEstimate {
        kappa: Some(kappa),
        ..NoiseEstimate::bare(sigma2, NoiseVariant::Simple)
    })
}

pub fn sigma_simple(spectrum: &SingularSpectrum, kappa: usize) -> Result<NoiseEstimate> {
    sigma_simple_values(spectrum.values(), spectrum.rows(), kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::spectra::diag_matrix;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 0);
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn soft_threshold_examples() {
        let y = diag_matrix(2, &[3.0, 1.0]);
        let f = soft_threshold_svd(&y, 2.0).unwrap();
        assert_eq!(f.df, 1);
        assert!((&f.fit - diag_matrix(2, &[1.0, 0.0])).norm() < 1e-12);

        let g = gaussian(12, 4, 1);
        let f0 = soft_threshold_svd(&g, 0.0).unwrap();
        assert_eq!(f0.df, 4);
        assert!((&f0.fit - &g).norm() < 1e-9 * g.norm());
        let d1 = singular_values(&g)[0];
        let fz = soft_threshold_svd(&g, d1).unwrap();
        assert_eq!(fz.df, 0);
        assert_eq!(fz.fit.norm(), 0.0);
    }

    #[test]
    fn gram_shrinkage_matches_dense_svd() {
        let g = gaussian(30, 6, 2);
        let lambda = 3.0;
        let fit = soft_threshold_svd(&g, lambda).unwrap().fit;
        let svd = g.clone().svd(true, true);
        let mut s = svd.singular_values.clone();
        s.iter_mut().for_each(|v| *v = (*v - lambda).max(0.0));
        let want = svd.u.unwrap() * DMatrix::from_diagonal(&s) * svd.v_t.unwrap();
        assert!((fit - want).norm() < 1e-10 * g.norm());
    }

    #[test]
    fn fully_observed_impute_is_one_prox_step() {
        let g = gaussian(20, 5, 3);
        let masked = MaskedMatrix::fully_observed(g.clone());
        let res = soft_impute(&masked, 1.5, None, &SoftImputeConfig::default(), false).unwrap();
        let want = soft_threshold_svd(&g, 1.5).unwrap().fit;
        assert!((res.fit - want).norm() < 1e-10);
        assert!(res.iterations <= 2);
    }

    fn rank_one_problem(seed: u64) -> (DMatrix<f64>, MaskedMatrix) {
        let (n, p) = (50, 10);
        let mut rng = stream_rng(seed, 1);
        let u = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let v = DMatrix::from_fn(p, 1, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let lam = 2.0 * ((n * p) as f64).powf(0.25);
        let truth = &u * v.transpose() * lam;
        let mut observed = vec![true; n * p];
        let mut idx: Vec<usize> = (0..n * p).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(n * p / 5) {
            observed[i] = false;
        }
        (truth.clone(), MaskedMatrix::new(truth, observed).unwrap())
    }

    #[test]
    fn completes_hidden_rank_one_entries_with_monotone_objective() {
        let (truth, masked) = rank_one_problem(4);
        let res = soft_impute(&masked, 0.05, None, &SoftImputeConfig::default(), true).unwrap();
        let mut err = 0.0;
        let mut size = 0.0;
        for (idx, (t, f)) in truth.iter().zip(res.fit.iter()).enumerate() {
            if !masked.observed()[idx] {
                err += (t - f) * (t - f);
                size += t * t;
            }
        }
        assert!((err / size).sqrt() < 0.10, "relative error {}", (err / size).sqrt());
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn singleton_grid_is_returned() {
        let g = gaussian(20, 5, 5);
        let mut rng = stream_rng(5, 2);
        let sel = cv_select_lambda(&g, &[0.7], &CvConfig::default(), &mut rng).unwrap();
        assert_eq!(sel.lambda, 0.7);
    }

    #[test]
    fn ascending_grid_is_rejected() {
        let g = gaussian(20, 5, 5);
        let mut rng = stream_rng(5, 2);
        assert!(cv_select_lambda(&g, &[0.5, 0.7], &CvConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn grid_spans_three_decades() {
        let grid = lambda_grid(10.0, &CvConfig::default());
        assert_eq!(grid.len(), 100);
        assert!((grid[0] - 10.0).abs() < 1e-12);
        assert!((grid[99] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn estimator_ordering_and_zero_fit() {
        let y = ObservedMatrix::new(gaussian(30, 6, 6)).unwrap();
        let lam = 4.0;
        let a = sigma_hat(&y, lam, NoiseVariant::Lambda, 0.5, None).unwrap();
        let b = sigma_hat(&y, lam, NoiseVariant::LambdaDfC, 0.5, None).unwrap();
        let c = sigma_hat(&y, lam, NoiseVariant::LambdaDf, 0.5, None).unwrap();
        assert!(a.df.unwrap() > 0);
        assert!(a.sigma2 <= b.sigma2 && b.sigma2 <= c.sigma2);
        let d1 = singular_values(y.matrix())[0];
        let z = sigma_hat(&y, d1, NoiseVariant::Lambda, 0.5, None).unwrap();
        assert!((z.sigma2 - y.frobenius_sq() / 180.0).abs() < 1e-12);
    }

    #[test]
    fn full_df_denominator_is_degenerate() {
        let y = ObservedMatrix::new(gaussian(30, 6, 7)).unwrap();
        let err = sigma_hat(&y, 1e-6, NoiseVariant::LambdaDf, 1.0, None).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn mp_median_reference_values() {
        // closed-form CDF root, computed independently with scipy brentq
        assert!((mp_median(0.2).unwrap() - 0.932_915_48).abs() < 1e-8);
        assert!((mp_median(5.0 / 88.0).unwrap() - 0.981_028_22).abs() < 1e-8);
        assert!((mp_median(1e-14).unwrap() - 1.0).abs() < 1e-12);
        for r in [0.01, 0.2, 0.5, 1.0] {
            let m = mp_median(r).unwrap();
            let s = r.sqrt();
            assert!(m > (1.0 - s).powi(2) && m < (1.0 + s).powi(2));
        }
    }

    #[test]
    fn mp_median_square_case_matches_simulation() {
        let n = 300;
        let mut eig = Vec::new();
        for seed in 0..2 {
            let g = gaussian(n, n, 100 + seed);
            let w = g.transpose() * &g / n as f64;
            eig.extend(SymmetricEigen::new(w).eigenvalues.iter().copied());
        }
        let emp = median(&eig);
        let want = mp_median(1.0).unwrap();
        assert!((emp - want).abs() < 0.01 * want, "{emp} vs {want}");
    }

    #[test]
    fn sigma_med_is_scale_equivariant() {
        let g = gaussian(40, 7, 8);
        let a = sigma_med(&ObservedMatrix::new(g.clone()).unwrap()).unwrap().sigma2;
        let b = sigma_med(&ObservedMatrix::new(g * 3.0).unwrap()).unwrap().sigma2;
        assert!((b - 9.0 * a).abs() < 1e-10 * b);
    }

    #[test]
    fn simple_estimator_examples() {
        let s = sigma_simple_values(&[2.0, 1.0, 1.0], 3, 1).unwrap();
        assert!((s.sigma2 - 1.0 / 3.0).abs() < 1e-15);
        let t = sigma_simple_values(&[2.0, 1.0, 0.5], 3, 2).unwrap();
        assert!((t.sigma2 - 0.25 / 3.0).abs() < 1e-15);
        let u = sigma_simple_values(&[2.0, 1.0], 4, 0).unwrap();
        assert!((u.sigma2 - 5.0 / 8.0).abs() < 1e-15);
        assert!(sigma_simple_values(&[2.0, 1.0], 4, 2).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [
            NoiseVariant::Simple,
            NoiseVariant::Lambda,
            NoiseVariant::LambdaDf,
            NoiseVariant::LambdaDfC,
            NoiseVariant::Median,
        ] {
            assert_eq!(v.to_string().parse::<NoiseVariant>().unwrap(), v);
        }
    }
}
