//! The integrated CSV statistic by self-normalized importance sampling.
//!
//! The proposal draws the trailing values `y_{k+1} >= ... >= y_p` as the
//! singular values of an `(N-k) x (p-k)` Gaussian matrix, whose density
//! matches the target up to the cross factor `prod_{i<k} prod_{j>k}
//! (d_i^2 - y_j^2)` and the truncation `y_{k+1} <= d_{k-1}`. Given a draw,
//! the remaining coordinate `y_k` is integrated out by Gauss–Legendre
//! quadrature over `[y_{k+1}, d_{k-1}]`, split at `d_k`. The proposal
//! variance is shrunk by a factor picked on a pilot sample, with the
//! matching exponential correction in the weight.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{check_spectrum, check_step, Method, TestOutcome};
use crate::quadrature::gauss_legendre;
use crate::rng::{stream_id, stream_rng};
use crate::spectra::{singular_values, LogMagnitude, SingularSpectrum};

/// Largest column count accepted by the sampler.
pub const MAX_COLUMNS: usize = 40;
pub const BATCH_SIZE: usize = 5_000;
const STREAM_TAG: u32 = 0x1c5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub min_ess: f64,
    pub max_batches: usize,
}

impl Default for ISConfig {
    fn default() -> Self {
        Self {
            sample_count: 50_000,
            seed: 20_160_104,
            min_ess: 50.0,
            max_batches: 40,
        }
    }
}

impl ISConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 1000 {
            return Err(Error::param(format!(
                "sample_count must be at least 1000, got {}",
                self.sample_count
            )));
        }
        if !(self.min_ess >= 50.0) {
            return Err(Error::param(format!("min_ess must be at least 50, got {}", self.min_ess)));
        }
        if self.max_batches < self.base_batches() {
            return Err(Error::param(format!(
                "max_batches {} is below the {} batches needed for sample_count",
                self.max_batches,
                self.base_batches()
            )));
        }
        Ok(())
    }

    fn base_batches(&self) -> usize {
        self.sample_count.div_ceil(BATCH_SIZE)
    }
}

/// Singular values `y_1 >= ... >= y_pr` of one Gaussian draw.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartDraw {
    pub values: Vec<f64>,
}

fn check_dims(nr: usize, pr: usize) -> Result<()> {
    if pr == 0 || nr < pr {
        return Err(Error::param(format!("need Nr >= pr >= 1, got Nr={nr}, pr={pr}")));
    }
    Ok(())
}

/// Singular values of an `nr x pr` matrix with i.i.d. `N(0, sigma2)` entries,
/// by a dense SVD.
pub fn sample_wishart_singulars<R: Rng + ?Sized>(
    nr: usize,
    pr: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<WishartDraw> {
    check_dims(nr, pr)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::param(format!("sigma2 must be positive, got {sigma2}")));
    }
    let sigma = sigma2.sqrt();
    let m = DMatrix::from_fn(nr, pr, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    Ok(WishartDraw {
        values: singular_values(&m),
    })
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL.
/// `diag` is overwritten with the eigenvalues (unsorted); `off[i]` couples
/// `i` and `i + 1`.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Internal("tridiagonal QL iteration did not converge".into()));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Squared singular values, descending, of an `nr x pr` standard Gaussian
/// matrix, drawn through its bidiagonal chi model.
struct BidiagonalSampler {
    diag_law: Vec<ChiSquared<f64>>,
    off_law: Vec<ChiSquared<f64>>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl BidiagonalSampler {
    fn new(nr: usize, pr: usize) -> Result<Self> {
        check_dims(nr, pr)?;
        let chi = |df: usize| {
            ChiSquared::new(df as f64).map_err(|e| Error::Internal(format!("chi-square law: {e}")))
        };
        let diag_law = (0..pr).map(|i| chi(nr - i)).collect::<Result<Vec<_>>>()?;
        let off_law = (1..pr).map(|i| chi(pr - i)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            diag_law,
            off_law,
            diag: vec![0.0; pr],
            off: vec![0.0; pr],
        })
    }

    fn draw_squares<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let pr = self.diag_law.len();
        // T = B^T B with B upper bidiagonal: diag a_i^2 + b_{i-1}^2, off a_i b_i
        let mut prev_b2 = 0.0;
        for i in 0..pr {
            let a2 = self.diag_law[i].sample(rng);
            self.diag[i] = a2 + prev_b2;
            if i + 1 < pr {
                let b2 = self.off_law[i].sample(rng);
                self.off[i] = (a2 * b2).sqrt();
                prev_b2 = b2;
            }
        }
        tridiagonal_eigenvalues(&mut self.diag, &mut self.off)?;
        for (o, v) in out.iter_mut().zip(&self.diag) {
            *o = v.max(0.0);
        }
        out.sort_unstable_by(|a, b| b.total_cmp(a));
        Ok(())
    }
}

/// A reusable bank of unit-variance proposal draws for one `(Nr, pr)`.
///
/// Sharing a pool across many spectra gives common random numbers for
/// replication studies; each p-value is still an unbiased-in-the-limit
/// self-normalized estimate.
#[derive(Debug, Clone)]
pub struct WishartPool {
    nr: usize,
    pr: usize,
    /// Squared singular values, `pr` per draw, descending within a draw.
    squares: Vec<f64>,
}

impl WishartPool {
    pub fn generate(nr: usize, pr: usize, count: usize, seed: u64, stream: u64) -> Result<Self> {
        let mut sampler = BidiagonalSampler::new(nr, pr)?;
        let mut rng = stream_rng(seed, stream);
        let mut squares = vec![0.0; count * pr];
        for chunk in squares.chunks_mut(pr) {
            sampler.draw_squares(&mut rng, chunk)?;
        }
        Ok(Self { nr, pr, squares })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nr, self.pr)
    }

    pub fn len(&self) -> usize {
        self.squares.len() / self.pr
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }

    /// Singular values of draw `i`, unit noise.
    pub fn draw(&self, i: usize) -> WishartDraw {
        WishartDraw {
            values: self.squares[i * self.pr..(i + 1) * self.pr]
                .iter()
                .map(|v| v.sqrt())
                .collect(),
        }
    }

    fn chunks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.squares.chunks_exact(self.pr)
    }
}

/// Running sums of the self-normalized ratio estimator, kept in log domain.
///
/// Each draw contributes a denominator term `b` and a numerator term
/// `a = frac * b` with `frac` in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
struct WeightSums {
    b: LogMagnitude,
    a: LogMagnitude,
    bb: LogMagnitude,
    ab: LogMagnitude,
    aa: LogMagnitude,
    draws: usize,
}

impl WeightSums {
    fn new() -> Self {
        Self {
            b: LogMagnitude::ZERO,
            a: LogMagnitude::ZERO,
            bb: LogMagnitude::ZERO,
            ab: LogMagnitude::ZERO,
            aa: LogMagnitude::ZERO,
            draws: 0,
        }
    }

    /// Adds a batch of `(log b, frac)` pairs.
    fn add_batch(&mut self, batch: &[(f64, f64)]) {
        self.draws += batch.len();
        let m = batch.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return;
        }
        let (mut b, mut a, mut bb, mut ab, mut aa) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(lb, frac) in batch {
            let x = (lb - m).exp();
            let x2 = x * x;
            b += x;
            a += x * frac;
            bb += x2;
            ab += x2 * frac;
            aa += x2 * frac * frac;
        }
        let lift = |s: f64, scale: f64| LogMagnitude::from_log(scale + s.ln());
        self.b = self.b + lift(b, m);
        self.a = self.a + lift(a, m);
        self.bb = self.bb + lift(bb, 2.0 * m);
        self.ab = self.ab + lift(ab, 2.0 * m);
        self.aa = self.aa + lift(aa, 2.0 * m);
    }

    fn ratio(&self) -> f64 {
        self.a.ratio(self.b).clamp(0.0, 1.0)
    }

    fn ess(&self) -> f64 {
        if self.b.is_zero() {
            return 0.0;
        }
        (2.0 * self.b.ln() - self.bb.ln()).exp()
    }

    fn std_error(&self) -> f64 {
        if self.b.is_zero() {
            return f64::NAN;
        }
        let r = self.ratio();
        let b2 = self.b * self.b;
        let v = self.aa.ratio(b2) - 2.0 * r * self.ab.ratio(b2) + r * r * self.bb.ratio(b2);
        v.max(0.0).sqrt()
    }
}

const GL_NODES: usize = 8;
/// Widest quadrature panel, in units of `sigma`.
const PANEL_WIDTH: f64 = 1.0;
/// Upper cutoff beyond the mode bound when `d_0 = inf`.
const TAIL_WIDTH: f64 = 12.0;
/// Candidate proposal variances, tried on a pilot sample.
const SCALE_GRID: [f64; 10] = [1.0, 0.85, 0.7, 0.6, 0.5, 0.42, 0.35, 0.28, 0.22, 0.16];
const PILOT_DRAWS: usize = 1000;
const PILOT_STREAM: u64 = 0xff_ffff;

#[derive(Default)]
struct Scratch {
    z2: Vec<f64>,
    terms: Vec<f64>,
}

/// Importance weights and conditional integrals for one step, in units of `sigma`.
struct StepWeights {
    /// `d_i^2 / sigma^2` for `i < k`.
    leading: Vec<f64>,
    /// `d_k / sigma`.
    lower: f64,
    /// `d_{k-1} / sigma`, infinite for `k = 1`.
    cap: f64,
    power: f64,
    /// Upper bound on the mode of the `y_k` density.
    mode: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Variance of the proposal relative to the null model.
    scale2: f64,
}

impl StepWeights {
    fn new(values: &[f64], n: usize, k: usize, sigma2: f64) -> Self {
        let sigma = sigma2.sqrt();
        let p = values.len();
        let leading: Vec<f64> = values[..k - 1].iter().map(|d| d * d / sigma2).collect();
        let cap = if k == 1 { f64::INFINITY } else { values[k - 2] / sigma };
        let (nodes, weights) = gauss_legendre(GL_NODES);
        Self {
            leading,
            lower: values[k - 1] / sigma,
            cap,
            power: (n - p) as f64,
            mode: ((n + p) as f64).sqrt(),
            nodes,
            weights,
            scale2: 1.0,
        }
    }

    /// Picks the proposal variance with the largest pilot ESS.
    fn tune(&mut self, pilot: &[&[f64]], scratch: &mut Scratch) {
        let mut best = (f64::NEG_INFINITY, 1.0);
        for &s2 in &SCALE_GRID {
            self.scale2 = s2;
            let mut sums = WeightSums::new();
            let batch: Vec<(f64, f64)> = pilot.iter().map(|u| self.eval(u, scratch)).collect();
            sums.add_batch(&batch);
            let ess = sums.ess();
            if ess > best.0 {
                best = (ess, s2);
            }
        }
        self.scale2 = best.1;
    }

    fn log_density(&self, y: f64, z2: &[f64]) -> f64 {
        let y2 = y * y;
        let mut prod = 1.0;
        for &t in z2 {
            prod *= y2 - t;
        }
        for &d in &self.leading {
            prod *= d - y2;
        }
        let mut acc = -0.5 * y2 + prod.ln();
        if self.power != 0.0 {
            acc += self.power * y.ln();
        }
        acc
    }

    /// `log int_a^b f(y) dy` by composite Gauss–Legendre.
    fn log_integral(&self, a: f64, b: f64, z2: &[f64], buf: &mut Vec<f64>) -> f64 {
        if !(b > a) {
            return f64::NEG_INFINITY;
        }
        let panels = ((b - a) / PANEL_WIDTH).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        buf.clear();
        for j in 0..panels {
            let mid = a + h * (j as f64 + 0.5);
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                let y = mid + 0.5 * h * x;
                buf.push(self.log_density(y, z2) + (0.5 * h * w).ln());
            }
        }
        let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + buf.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// `(log b, frac)` for one unit-variance draw of squared trailing values.
    fn eval(&self, unit: &[f64], scratch: &mut Scratch) -> (f64, f64) {
        let Scratch { z2, terms } = scratch;
        z2.clear();
        z2.extend(unit.iter().map(|u| u * self.scale2));
        let z1 = z2.first().map_or(0.0, |v| v.sqrt());
        if z1 >= self.cap {
            return (f64::NEG_INFINITY, 0.0);
        }
        let mut lw = 0.5 * (1.0 - self.scale2) * unit.iter().sum::<f64>();
        for &di in &self.leading {
            let mut prod = 1.0;
            for &zj in z2.iter() {
                prod *= di - zj;
            }
            lw += prod.ln();
        }
        let c = z1.max(self.lower);
        let top = if self.cap.is_finite() {
            self.cap
        } else {
            c.max(self.mode) + TAIL_WIDTH
        };
        let log_low = self.log_integral(z1, c, z2, terms);
        let log_up = self.log_integral(c, top, z2, terms);
        let log_den = LogMagnitude::from_log(log_low) + LogMagnitude::from_log(log_up);
        if log_den.is_zero() {
            return (f64::NEG_INFINITY, 0.0);
        }
        let frac = (log_up - log_den.ln()).exp().clamp(0.0, 1.0);
        (lw + log_den.ln(), frac)
    }
}

fn validate_step(values: &[f64], n: usize, k: usize, sigma2: f64) -> Result<()> {
    check_spectrum(values, n)?;
    if values.len() > MAX_COLUMNS {
        return Err(Error::Unsupported(format!(
            "the integrated test supports at most {MAX_COLUMNS} columns, got {}",
            values.len()
        )));
    }
    check_step(k, values.len())?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::param(format!("sigma2 must be positive, got {sigma2}")));
    }
    for i in 0..k.saturating_sub(1) {
        if values[i] < values[k - 2] {
            return Err(Error::Internal("leading singular values out of order".into()));
        }
    }
    Ok(())
}

fn degenerate_outcome(k: usize, sigma2: f64) -> TestOutcome {
    TestOutcome {
        k,
        method: Method::Icsv,
        p_value: 0.0,
        statistic: 0.0,
        sigma2_used: Some(sigma2),
        rejected: true,
        diagnostics: BTreeMap::new(),
        flags: vec!["degenerate_interval".to_string()],
    }
}

fn finish(k: usize, sigma2: f64, sums: &WeightSums, batches: usize, min_ess: f64, scale2: f64) -> Result<TestOutcome> {
    if sums.b.is_zero() {
        return Err(Error::Numerical {
            message: format!("no proposal draw carried weight below d_{} after {} draws", k - 1, sums.draws),
            estimate: f64::NAN,
            achieved: f64::INFINITY,
        });
    }
    let p = sums.ratio();
    let ess = sums.ess();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("mc_std_error".to_string(), sums.std_error());
    diagnostics.insert("effective_sample_size".to_string(), ess);
    diagnostics.insert("draws".to_string(), sums.draws as f64);
    diagnostics.insert("batches".to_string(), batches as f64);
    diagnostics.insert("proposal_scale".to_string(), scale2);
    let mut flags = Vec::new();
    if ess < min_ess {
        flags.push("ess_below_floor".to_string());
    }
    Ok(TestOutcome {
        k,
        method: Method::Icsv,
        p_value: p,
        statistic: p,
        sigma2_used: Some(sigma2),
        rejected: p <= 0.05,
        diagnostics,
        flags,
    })
}

/// `V_{k,0}` from raw singular values, sampling fresh proposal draws.
pub fn icsv_statistic_values(
    values: &[f64],
    n: usize,
    k: usize,
    sigma2: f64,
    cfg: &ISConfig,
) -> Result<TestOutcome> {
    cfg.validate()?;
    validate_step(values, n, k, sigma2)?;
    if k >= 2 && values[k - 1] >= values[k - 2] {
        return Ok(degenerate_outcome(k, sigma2));
    }
    let p = values.len();
    let (nr, pr) = (n - k, p - k);
    let mut weights = StepWeights::new(values, n, k, sigma2);
    let mut buf = Scratch::default();
    let mut sampler = BidiagonalSampler::new(nr, pr)?;
    let mut y2 = vec![0.0; pr];
    let mut pilot = vec![0.0; PILOT_DRAWS * pr];
    let mut rng = stream_rng(cfg.seed, stream_id(STREAM_TAG, ((k as u64) << 24) | PILOT_STREAM));
    for chunk in pilot.chunks_mut(pr) {
        sampler.draw_squares(&mut rng, chunk)?;
    }
    weights.tune(&pilot.chunks(pr).collect::<Vec<_>>(), &mut buf);
    let mut sums = WeightSums::new();
    let mut batch = Vec::with_capacity(BATCH_SIZE);
    let base = cfg.base_batches();
    let mut batches = 0;
    while batches < cfg.max_batches {
        let remaining = cfg.sample_count.saturating_sub(batches * BATCH_SIZE);
        if batches >= base && sums.ess() >= cfg.min_ess {
            break;
        }
        let size = if remaining > 0 { remaining.min(BATCH_SIZE) } else { BATCH_SIZE };
        let mut rng = stream_rng(cfg.seed, stream_id(STREAM_TAG, ((k as u64) << 24) | batches as u64));
        batch.clear();
        for _ in 0..size {
            sampler.draw_squares(&mut rng, &mut y2)?;
            batch.push(weights.eval(&y2, &mut buf));
        }
        sums.add_batch(&batch);
        batches += 1;
    }
    finish(k, sigma2, &sums, batches, cfg.min_ess, weights.scale2)
}

/// `V_{k,0}` for an observed spectrum.
pub fn icsv_statistic(
    spectrum: &SingularSpectrum,
    k: usize,
    sigma2: f64,
    cfg: &ISConfig,
) -> Result<TestOutcome> {
    icsv_statistic_values(spectrum.values(), spectrum.rows(), k, sigma2, cfg)
}

/// `V_{k,0}` evaluated against a precomputed pool of proposal draws.
pub fn icsv_with_pool(
    values: &[f64],
    n: usize,
    k: usize,
    sigma2: f64,
    pool: &WishartPool,
    min_ess: f64,
) -> Result<TestOutcome> {
    validate_step(values, n, k, sigma2)?;
    let want = (n - k, values.len() - k);
    if pool.dims() != want {
        return Err(Error::param(format!(
            "pool dimensions {:?} do not match step dimensions {:?}",
            pool.dims(),
            want
        )));
    }
    if k >= 2 && values[k - 1] >= values[k - 2] {
        return Ok(degenerate_outcome(k, sigma2));
    }
    let mut weights = StepWeights::new(values, n, k, sigma2);
    let mut buf = Scratch::default();
    let draws: Vec<&[f64]> = pool.chunks().collect();
    weights.tune(&draws[..draws.len().min(PILOT_DRAWS)], &mut buf);
    let mut sums = WeightSums::new();
    let mut batch = Vec::with_capacity(BATCH_SIZE);
    let mut batches = 0;
    for chunk in draws.chunks(BATCH_SIZE) {
        batch.clear();
        batch.extend(chunk.iter().map(|y2| weights.eval(y2, &mut buf)));
        sums.add_batch(&batch);
        batches += 1;
    }
    finish(k, sigma2, &sums, batches, min_ess, weights.scale2)
}
