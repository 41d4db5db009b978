//! Null uniformity when the signal is either absent or far above the noise.

use pcrank::exact::{Method, TestSettings};
use pcrank::simlab::{run_null_calibration, Design};

fn check(rank: usize, m: f64, method: Method, steps: &[usize], reps: usize, seed: u64) {
    let settings = TestSettings::default();
    let design = Design::gaussian(50, 10, rank, m);
    let res = run_null_calibration(&design, &[method], steps, reps, seed, &settings, false).unwrap();
    let level = 0.01 / steps.len() as f64;
    for &k in steps {
        let s = res.find(&method.to_string(), k).unwrap();
        assert!(s.ks_pvalue > level, "rank {rank} m {m} {method} step {k}: D={} p={}", s.ks_distance, s.ks_pvalue);
        if let Some(se) = s.max_mc_std_error {
            assert!(se < 0.01, "step {k}: standard error {se}");
        }
    }
}

#[test]
fn csv_uniform_without_signal() {
    check(0, 0.0, Method::Csv, &(1..10).collect::<Vec<_>>(), 2000, 11);
}

#[test]
fn csv_uniform_above_strong_signal() {
    check(2, 5.0, Method::Csv, &(3..10).collect::<Vec<_>>(), 2000, 12);
}

#[test]
fn icsv_uniform_without_signal() {
    check(0, 0.0, Method::Icsv, &[2, 3, 4], 300, 13);
}

#[test]
fn icsv_uniform_above_strong_signal() {
    check(1, 5.0, Method::Icsv, &[2, 3, 4], 300, 14);
}
