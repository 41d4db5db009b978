//! Matrix ingestion, the singular value front-end, and the log-domain
//! integrand shared by the conditional tests.

use std::cmp::Ordering;
use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An observed data matrix, oriented so that `rows >= cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    data: DMatrix<f64>,
    transposed: bool,
}

impl ObservedMatrix {
    /// Wraps `data`, transposing it when it has fewer rows than columns.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::input("matrix has no entries"));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            // column-major storage
            let (r, c) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::input(format!(
                "non-finite entry at row {}, column {}",
                r + 1,
                c + 1
            )));
        }
        if data.nrows() < data.ncols() {
            Ok(Self {
                data: data.transpose(),
                transposed: true,
            })
        } else {
            Ok(Self {
                data,
                transposed: false,
            })
        }
    }

    /// Builds a matrix from row-major rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::input(format!(
                "row {} has {} fields, expected {}",
                i + 1,
                r.len(),
                p
            )));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Whether the input was transposed on ingestion.
    pub fn transposed(&self) -> bool {
        self.transposed
    }

    /// Column-centered copy (each column shifted to mean zero).
    pub fn centered(&self) -> Self {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Self {
            data,
            transposed: self.transposed,
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.norm_squared()
    }
}

/// Singular values in decreasing order together with their factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    values: Vec<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl SingularSpectrum {
    /// Singular values `d_1 >= ... >= d_p`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Left factors `U` (N x p, orthonormal columns).
    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// Right factors `V` (p x p, orthogonal).
    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// Number of rows `N` of the decomposed matrix.
    pub fn rows(&self) -> usize {
        self.left.nrows()
    }

    /// Number of columns `p` of the decomposed matrix.
    pub fn cols(&self) -> usize {
        self.values.len()
    }

    /// `U diag(d) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.values[j];
        }
        scaled * self.right.transpose()
    }

    /// `<U_k V_k^T, B>` for the 1-based direction index `k`.
    pub fn direction_inner(&self, k: usize, signal: &DMatrix<f64>) -> f64 {
        let u = self.left.column(k - 1);
        let v = self.right.column(k - 1);
        (u.transpose() * signal * v)[(0, 0)]
    }
}

/// Full singular value decomposition with a deterministic sign convention:
/// the largest-magnitude entry of each left factor column is positive.
pub fn svd_full(y: &ObservedMatrix) -> Result<SingularSpectrum> {
    let svd = nalgebra::SVD::try_new(y.matrix().clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical {
            message: "SVD did not converge".into(),
            estimate: f64::NAN,
            achieved: f64::NAN,
        })?;
    let mut left = svd.u.expect("u requested");
    let mut right = svd.v_t.expect("v requested").transpose();
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();

    // try_new sorts already; keep the ordering invariant explicit for ties at zero.
    debug_assert!(values.windows(2).all(|w| w[0] >= w[1]));
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    for j in 0..values.len() {
        let col = left.column(j);
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap_or(Ordering::Equal))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            left.column_mut(j).neg_mut();
            right.column_mut(j).neg_mut();
        }
    }
    Ok(SingularSpectrum {
        values,
        left,
        right,
    })
}

/// Singular values only, in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = nalgebra::SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    sv
}

/// Natural log of a nonnegative quantity; `-inf` encodes zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogMagnitude(f64);

impl LogMagnitude {
    pub const ZERO: LogMagnitude = LogMagnitude(f64::NEG_INFINITY);
    pub const ONE: LogMagnitude = LogMagnitude(0.0);

    /// Wraps a log value. NaN is mapped to zero magnitude.
    pub fn from_log(log_value: f64) -> Self {
        if log_value.is_nan() {
            Self::ZERO
        } else {
            Self(log_value)
        }
    }

    /// Log of a nonnegative `value`.
    pub fn from_value(value: f64) -> Self {
        debug_assert!(value >= 0.0);
        Self::from_log(value.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// `log(|exp(a) - exp(b)|)`.
    pub fn abs_diff(self, other: Self) -> Self {
        let (hi, lo) = if self.0 >= other.0 {
            (self.0, other.0)
        } else {
            (other.0, self.0)
        };
        if hi == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        if lo == f64::NEG_INFINITY {
            return Self(hi);
        }
        Self::from_log(hi + (-(-(hi - lo)).exp_m1()).ln())
    }

    /// Ratio `self / other` as a plain number.
    pub fn ratio(self, other: Self) -> f64 {
        (self.0 - other.0).exp()
    }
}

impl Add for LogMagnitude {
    type Output = LogMagnitude;

    fn add(self, rhs: Self) -> Self {
        let (hi, lo) = if self.0 >= rhs.0 {
            (self.0, rhs.0)
        } else {
            (rhs.0, self.0)
        };
        if lo == f64::NEG_INFINITY {
            return Self(hi);
        }
        Self(hi + (lo - hi).exp().ln_1p())
    }
}

impl Mul for LogMagnitude {
    type Output = LogMagnitude;

    fn mul(self, rhs: Self) -> Self {
        Self::from_log(self.0 + rhs.0)
    }
}

impl std::iter::Sum for LogMagnitude {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        // two passes would need buffering; shift incrementally instead
        iter.fold(Self::ZERO, |acc, x| acc + x)
    }
}

/// The conditional density of the `k`-th singular value (up to a constant),
/// recentered at `delta`:
/// `-(z - delta)^2 / (2 sigma2) + (N - p) log z + sum_{j != k} log|z^2 - d_j^2|`.
#[derive(Debug, Clone)]
pub struct CsvIntegrand {
    others_sq: Vec<f64>,
    power: f64,
    delta: f64,
    inv_two_sigma2: f64,
}

impl CsvIntegrand {
    /// `k` is 1-based.
    pub fn new(values: &[f64], k: usize, delta: f64, sigma2: f64, n: usize) -> Result<Self> {
        let p = values.len();
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::param(format!("sigma2 must be positive, got {sigma2}")));
        }
        if k == 0 || k > p {
            return Err(Error::param(format!("step k={k} outside 1..={p}")));
        }
        if n < p {
            return Err(Error::param(format!("rows N={n} fewer than columns p={p}")));
        }
        let others_sq = values
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k - 1)
            .map(|(_, d)| d * d)
            .collect();
        Ok(Self {
            others_sq,
            power: (n - p) as f64,
            delta,
            inv_two_sigma2: 0.5 / sigma2,
        })
    }

    #[inline]
    pub fn log_at(&self, z: f64) -> f64 {
        let dz = z - self.delta;
        let mut acc = -dz * dz * self.inv_two_sigma2;
        if self.power != 0.0 {
            acc += self.power * z.ln();
        }
        let z2 = z * z;
        let mut prod = 1.0f64;
        for &d2 in &self.others_sq {
            prod *= (z2 - d2).abs();
            if !(1e-150..=1e150).contains(&prod) {
                acc += prod.ln();
                prod = 1.0;
            }
        }
        acc + prod.ln()
    }
}

/// Log of the conditional-test integrand at `z` for the 1-based step `k`.
pub fn log_csv_integrand(
    z: f64,
    values: &[f64],
    k: usize,
    delta: f64,
    sigma2: f64,
    n: usize,
) -> Result<LogMagnitude> {
    if z < 0.0 || z.is_nan() {
        return Err(Error::param(format!("integration point must be >= 0, got {z}")));
    }
    let f = CsvIntegrand::new(values, k, delta, sigma2, n)?;
    Ok(LogMagnitude::from_log(f.log_at(z)))
}

/// An `n x diag.len()` matrix with `diag` on its leading diagonal.
pub fn diag_matrix(n: usize, diag: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, diag.len());
    for (i, d) in diag.iter().enumerate() {
        m[(i, i)] = *d;
    }
    m
}

/// `U diag(d) V^T` from explicit factors.
pub fn compose(left: &DMatrix<f64>, values: &DVector<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = left.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    scaled * right.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn diagonal_matrix_spectrum() {
        let y = ObservedMatrix::new(diag_matrix(3, &[1.0, 3.0, 2.0])).unwrap();
        let s = svd_full(&y).unwrap();
        let d = s.values();
        assert!((d[0] - 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0).abs() < 1e-12);
        assert!((d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_spectrum() {
        let y = ObservedMatrix::new(DMatrix::zeros(4, 2)).unwrap();
        let s = svd_full(&y).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0]);
    }

    #[test]
    fn wide_input_is_transposed() {
        let y = ObservedMatrix::new(gaussian(3, 7, 1)).unwrap();
        assert!(y.transposed());
        assert_eq!((y.rows(), y.cols()), (7, 3));
    }

    #[test]
    fn non_finite_entry_is_rejected() {
        let mut m = gaussian(4, 3, 2);
        m[(2, 1)] = f64::NAN;
        let err = ObservedMatrix::new(m).unwrap_err();
        assert!(matches!(err, Error::Input(ref s) if s.contains("row 3, column 2")));
    }

    #[test]
    fn factors_orthonormal_and_reconstruct() {
        let y = ObservedMatrix::new(gaussian(50, 10, 3)).unwrap();
        let s = svd_full(&y).unwrap();
        let eye = DMatrix::<f64>::identity(10, 10);
        let utu = s.left().transpose() * s.left() - &eye;
        let vtv = s.right().transpose() * s.right() - &eye;
        assert!(utu.norm() < 1e-8);
        assert!(vtv.norm() < 1e-8);
        let resid = (y.matrix() - s.reconstruct()).norm();
        assert!(resid <= 1e-8 * y.matrix().norm());
        for j in 0..10 {
            let col = s.left().column(j);
            let pivot = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(pivot > 0.0);
        }
        assert!(s.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn round_trip_reproduces_values() {
        let q = svd_full(&ObservedMatrix::new(gaussian(20, 6, 4)).unwrap()).unwrap();
        let d = DVector::from_vec(vec![9.0, 7.5, 4.0, 2.0, 1.0, 0.5]);
        let m = compose(q.left(), &d, q.right());
        let back = svd_full(&ObservedMatrix::new(m).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(d.iter()) {
            assert!((a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn top_value_concentration_over_replications() {
        let reps = 500;
        let mean: f64 = (0..reps)
            .map(|r| {
                let d = singular_values(&gaussian(50, 10, 100 + r));
                d[0] * d[0]
            })
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 102.37).abs() < 10.0, "mean d1^2 = {mean}");
    }

    #[test]
    fn integrand_vanishes_at_competing_value() {
        let d = [6.0, 4.0, 2.0];
        let v = log_csv_integrand(4.0, &d, 1, 0.0, 1.0, 5).unwrap();
        assert!(v.is_zero());
    }

    #[test]
    fn integrand_all_zero_competitors() {
        let d = [0.0, 3.0, 0.0];
        let v = log_csv_integrand(1.0, &d, 2, 0.0, 1.0, 3).unwrap();
        assert!((v.ln() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn integrand_spot_value() {
        let d = [6.0, 4.0, 2.0];
        let v = log_csv_integrand(5.0, &d, 2, 0.0, 1.0, 5).unwrap();
        let expected = -12.5 + 2.0 * 5f64.ln() + 11f64.ln() + 21f64.ln();
        assert!((v.ln() - expected).abs() < 1e-12);
        assert!((v.ln() - (-3.83870)).abs() < 1e-5);
    }

    #[test]
    fn integrand_rejects_bad_sigma() {
        assert!(matches!(
            log_csv_integrand(1.0, &[2.0, 1.0], 1, 0.0, 0.0, 3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn log_magnitude_arithmetic() {
        let a = LogMagnitude::from_value(3.0);
        let b = LogMagnitude::from_value(5.0);
        assert!(((a + b).value() - 8.0).abs() < 1e-12);
        assert!(((a * b).value() - 15.0).abs() < 1e-12);
        assert!((a.abs_diff(b).value() - 2.0).abs() < 1e-12);
        assert_eq!(LogMagnitude::ZERO + a, a);
        assert!((LogMagnitude::ZERO + LogMagnitude::ZERO).is_zero());
        let big = LogMagnitude::from_log(2000.0);
        assert!(((big + big).ln() - (2000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(!LogMagnitude::from_log(f64::NAN).ln().is_nan());
    }
}
