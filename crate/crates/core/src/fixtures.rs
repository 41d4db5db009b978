//! Bundled data sets.

use crate::error::Result;
use crate::spectra::ObservedMatrix;

const EXAM_SCORES: &str = include_str!("../data/exam_scores.txt");

pub const EXAM_COLUMNS: [&str; 5] = ["mechanics", "vectors", "algebra", "analysis", "statistics"];

/// Examination marks of 88 students on five topics (88 x 5).
pub fn exam_scores() -> Result<ObservedMatrix> {
    let rows: Vec<Vec<f64>> = EXAM_SCORES
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|v| v.parse().expect("bundled fixture is numeric"))
                .collect()
        })
        .collect();
    ObservedMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exam_scores_shape_and_means() {
        let y = exam_scores().unwrap();
        assert_eq!((y.rows(), y.cols()), (88, 5));
        let means: Vec<f64> = (0..5).map(|j| y.matrix().column(j).mean()).collect();
        let want = [38.954_545, 50.590_909, 50.602_273, 46.681_818, 42.306_818];
        for (m, w) in means.iter().zip(want) {
            assert!((m - w).abs() < 1e-5);
        }
    }
}
