mod common;

use chrono::NaiveDate;
use dpca_core::diagnostics::{
    henze_zirkler, outlier_fraction, pearson, rolling_outliers, rolling_pearson, DEFAULT_ALPHA,
};
use dpca_core::linalg::Matrix;
use dpca_core::panel::{to_lsao, to_nsao, Aggregator, Panel, Stage};

fn gaussian_window(rng: &mut rand_chacha::ChaCha8Rng, n: usize, p: usize) -> Matrix {
    Matrix::from_fn(n, p, |_, _| common::gaussian(rng))
}

fn panel(stage: Stage, values: Matrix) -> Panel {
    let p = values.cols();
    Panel {
        hour: 0,
        stage,
        aggregator: Aggregator::Median,
        start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        pollutants: (0..p).map(|j| format!("P{j}")).collect(),
        values,
        flagged_cells: vec![],
    }
}

#[test]
fn hz_rejection_rate_under_the_null() {
    let mut rng = common::rng(2024);
    let rejected = (0..500)
        .filter(|_| henze_zirkler(&gaussian_window(&mut rng, 45, 5)).unwrap().unwrap().p_value < 0.05)
        .count();
    let rate = rejected as f64 / 500.0;
    assert!((0.02..=0.09).contains(&rate), "null rejection rate {rate}");
}

#[test]
fn hz_detects_cubed_coordinates() {
    let mut rng = common::rng(7);
    let rejected = (0..200)
        .filter(|_| {
            let mut x = gaussian_window(&mut rng, 45, 5);
            for i in 0..45 {
                for j in 0..5 {
                    x[(i, j)] = x[(i, j)].powi(3);
                }
            }
            henze_zirkler(&x).unwrap().unwrap().p_value < 0.05
        })
        .count();
    let power = rejected as f64 / 200.0;
    assert!(power > 0.9, "power {power}");
}

#[test]
fn spherical_null_flags_few_outliers() {
    let mut rng = common::rng(11);
    let fractions: Vec<f64> = (0..200)
        .map(|_| outlier_fraction(&gaussian_window(&mut rng, 45, 5), DEFAULT_ALPHA).unwrap().unwrap())
        .collect();
    assert!(fractions.iter().all(|f| (0.0..=0.15).contains(f)), "max {:?}", fractions.iter().cloned().fold(0.0, f64::max));
    let mean = fractions.iter().sum::<f64>() / 200.0;
    assert!(mean < 0.05, "mean flagged fraction {mean}");
}

#[test]
fn planted_outliers_are_found() {
    let mut rng = common::rng(12);
    for _ in 0..20 {
        let mut x = gaussian_window(&mut rng, 45, 5);
        for (i, row) in [4usize, 20, 33].iter().enumerate() {
            for j in 0..5 {
                x[(*row, j)] += if (i + j) % 2 == 0 { 8.0 } else { -8.0 };
            }
        }
        let f = outlier_fraction(&x, DEFAULT_ALPHA).unwrap().unwrap();
        assert!(f >= 3.0 / 45.0, "flagged {f}");
    }
}

#[test]
fn pearson_matches_oracle_and_is_affine_invariant() {
    let mut rng = common::rng(13);
    for _ in 0..100 {
        let x: Vec<f64> = (0..45).map(|_| common::gaussian(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.4 * v + common::gaussian(&mut rng)).collect();
        let r = pearson(&x, &y).unwrap();
        assert!((r - common::pearson(&x, &y)).abs() < 1e-12);
        let xa: Vec<f64> = x.iter().map(|v| 3.0 * v - 11.0).collect();
        let ya: Vec<f64> = y.iter().map(|v| 0.25 * v + 4.0).collect();
        assert!((pearson(&xa, &ya).unwrap() - r).abs() < 1e-12);
    }
    let x = Matrix::from_fn(60, 2, |i, j| (i as f64).sin() * if j == 0 { 1.0 } else { -2.0 });
    let s = rolling_pearson(&panel(Stage::Nsao, x), 45, (0, 1)).unwrap();
    assert!(s.values.iter().all(|r| (r.unwrap() + 1.0).abs() < 1e-12));
}

// Log concentrations follow a random walk with Gaussian steps, so NSAO is
// i.i.d. Gaussian, LSAO drifts inside each window, and SAO additionally
// carries the heavy right tail of the exponential.
#[test]
fn outliers_shrink_along_the_transform_ladder() {
    let mut rng = common::rng(99);
    let days = 400;
    let p = 5;
    let mut level = vec![6.0; p];
    let mut values = Matrix::zeros(days, p);
    for d in 0..days {
        let common_step = common::gaussian(&mut rng);
        for j in 0..p {
            level[j] += 0.15 * (0.6 * common_step + 0.8 * common::gaussian(&mut rng));
            values[(d, j)] = level[j].exp();
        }
    }
    let sao = panel(Stage::Sao, values);
    let lsao = to_lsao(&sao).unwrap();
    let nsao = to_nsao(&lsao).unwrap();
    let mean = |p: &Panel| {
        let s = rolling_outliers(p, 45, DEFAULT_ALPHA).unwrap();
        s.values.iter().map(|v| v.unwrap()).sum::<f64>() / s.values.len() as f64
    };
    let (a, b, c) = (mean(&sao), mean(&lsao), mean(&nsao));
    assert!(c < b && b < a, "SAO {a}, LSAO {b}, NSAO {c}");
}
