mod common;

use dpca_core::linalg::{covariance, eigen_sym, Matrix, SymMatrix};
use proptest::prelude::*;

fn sym(rows: &[Vec<f64>]) -> SymMatrix {
    SymMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
}

#[test]
fn covariance_matches_two_pass_oracle() {
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let rows = common::random_rows(&mut rng, 45, 5);
        let got = covariance(&Matrix::from_rows(&rows).unwrap(), false).unwrap();
        let want = common::two_pass_covariance(&rows);
        for a in 0..5 {
            for b in 0..5 {
                assert!((got.get(a, b) - want[a][b]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn eigenvalues_match_characteristic_polynomial() {
    let mut rng = common::rng(5);
    for _ in 0..100 {
        let m = common::random_symmetric(&mut rng, 5);
        let e = eigen_sym(&sym(&m)).unwrap();
        let oracle = common::char_poly_eigenvalues(&m);
        for (a, b) in e.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", e.values, oracle);
        }
    }
}

#[test]
fn reconstruction_trace_and_orthogonality() {
    let mut rng = common::rng(8);
    for _ in 0..100 {
        let m = common::random_symmetric(&mut rng, 5);
        let s = sym(&m);
        let e = eigen_sym(&s).unwrap();
        let trace: f64 = e.values.iter().sum();
        assert!((trace - s.trace()).abs() < 1e-9);
        for i in 0..5 {
            for j in 0..5 {
                let recon: f64 = (0..5)
                    .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                    .sum();
                assert!((recon - m[i][j]).abs() < 1e-9);
                let dot: f64 = (0..5).map(|r| e.vectors[(r, i)] * e.vectors[(r, j)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}

#[test]
fn eigen_is_bitwise_deterministic() {
    let mut rng = common::rng(21);
    let m = common::random_symmetric(&mut rng, 6);
    let a = eigen_sym(&sym(&m)).unwrap();
    let b = eigen_sym(&sym(&m)).unwrap();
    let bits = |e: &dpca_core::linalg::EigenResult| {
        e.values
            .iter()
            .chain(e.vectors.as_slice())
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

proptest! {
    #[test]
    fn covariance_is_positive_semidefinite(
        data in prop::collection::vec(-1e3f64..1e3, 3 * 4..=40 * 4)
    ) {
        let n = data.len() / 4;
        let x = Matrix::from_vec(n, 4, data[..n * 4].to_vec()).unwrap();
        let c = covariance(&x, false).unwrap();
        let e = eigen_sym(&c).unwrap();
        let scale = c.as_matrix().frobenius_norm().max(1.0);
        prop_assert!(e.values[3] >= -1e-10 * scale);
    }

    #[test]
    fn eigenpairs_satisfy_defining_relation(seed in any::<u64>(), dim in 1usize..9) {
        let mut rng = common::rng(seed);
        let m = common::random_symmetric(&mut rng, dim);
        let s = sym(&m);
        let e = eigen_sym(&s).unwrap();
        let norm = s.as_matrix().frobenius_norm().max(1e-300);
        for k in 0..dim {
            for i in 0..dim {
                let mv: f64 = (0..dim).map(|j| m[i][j] * e.vectors[(j, k)]).sum();
                prop_assert!((mv - e.values[k] * e.vectors[(i, k)]).abs() <= 1e-8 * norm);
            }
        }
    }
}
