use pcrank::noise::{cv_select_lambda, lambda_grid, sigma_cv, CvConfig, NoiseVariant};
use pcrank::rng::stream_rng;
use pcrank::simlab::{generate_noise, generate_signal, NoiseKind, NoiseSpec, SignalSpec};
use pcrank::spectra::{singular_values, ObservedMatrix};

fn draw(rank: usize, m: f64, seed: u64) -> ObservedMatrix {
    let spec = SignalSpec {
        n: 50,
        p: 10,
        rank,
        m,
        sigma2: 1.0,
    };
    let mut rng = stream_rng(seed, 0);
    let b = generate_signal(&spec, &mut rng).unwrap();
    let e = generate_noise(
        50,
        10,
        &NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma2: 1.0,
        },
        &mut rng,
    );
    ObservedMatrix::new(b + e).unwrap()
}

#[test]
fn strong_signal_selects_lambda_below_top_value() {
    let cfg = CvConfig::default();
    let mut hits = 0;
    for seed in 0..10 {
        let y = draw(1, 2.0, seed);
        let d1 = singular_values(y.matrix())[0];
        let (est, sel) = sigma_cv(&y, NoiseVariant::LambdaDfC, &cfg, &mut stream_rng(seed, 1)).unwrap();
        assert_eq!(sel.grid, lambda_grid(d1, &cfg));
        assert!(est.df.unwrap() < 10);
        if sel.lambda < d1 {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}");
}

#[test]
fn null_estimates_are_near_unit_variance() {
    let cfg = CvConfig::default();
    let mut sum = 0.0;
    let reps = 10;
    for seed in 0..reps {
        let y = draw(0, 0.0, 100 + seed);
        sum += sigma_cv(&y, NoiseVariant::LambdaDfC, &cfg, &mut stream_rng(seed, 1)).unwrap().0.sigma2;
    }
    let mean = sum / reps as f64;
    assert!((0.7..1.3).contains(&mean), "{mean}");
}

#[test]
fn cross_validation_is_deterministic() {
    let y = draw(1, 1.5, 3);
    let cfg = CvConfig::default();
    let a = sigma_cv(&y, NoiseVariant::LambdaDfC, &cfg, &mut stream_rng(4, 1)).unwrap();
    let b = sigma_cv(&y, NoiseVariant::LambdaDfC, &cfg, &mut stream_rng(4, 1)).unwrap();
    assert_eq!(a.0.sigma2, b.0.sigma2);
    assert_eq!(a.1.errors, b.1.errors);
}

#[test]
fn pure_noise_selects_heavy_shrinkage() {
    let cfg = CvConfig::default();
    let runs = 20;
    let mut upper = 0;
    for seed in 0..runs {
        let y = draw(0, 0.0, 500 + seed);
        let d1 = singular_values(y.matrix())[0];
        let grid = lambda_grid(d1, &cfg);
        let sel = cv_select_lambda(y.matrix(), &grid, &cfg, &mut stream_rng(seed, 2)).unwrap();
        let i = grid.iter().position(|g| *g == sel.lambda).unwrap();
        if i < grid.len() / 2 {
            upper += 1;
        }
    }
    assert!(upper * 10 >= runs * 8, "{upper}/{runs}");
}
