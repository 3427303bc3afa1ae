use coopeig::matrixkit::{averaged_matrices, perron, MatrixField, SquareMatrix};
use proptest::prelude::*;

fn ess_nonneg(max_n: usize) -> impl Strategy<Value = SquareMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| {
            SquareMatrix::from_fn(n, |i, j| if i == j { 4.0 * v[i * n + j] - 2.0 } else { v[i * n + j] + 0.01 })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_equivariance(m in ess_nonneg(5), c in -3.0f64..3.0) {
        let a = perron(&m).unwrap().value;
        let b = perron(&m.shifted(c)).unwrap().value;
        prop_assert!((b - a - c).abs() < 1e-10, "{a} {b} {c}");
    }

    #[test]
    fn transpose_keeps_value_and_swaps_vectors(m in ess_nonneg(5)) {
        let p = perron(&m).unwrap();
        let q = perron(&m.transpose()).unwrap();
        prop_assert!((p.value - q.value).abs() < 1e-10);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let cos = dot(&p.left, &q.right) / (dot(&p.left, &p.left) * dot(&q.right, &q.right)).sqrt();
        prop_assert!((cos - 1.0).abs() < 1e-8, "cos {cos}");
    }

    #[test]
    fn monotone_in_entries(m in ess_nonneg(4), bump in prop::collection::vec(0.0f64..0.5, 16)) {
        let n = m.order();
        let bigger = SquareMatrix::from_fn(n, |i, j| m[(i, j)] + bump[i * n + j]);
        prop_assert!(perron(&m).unwrap().value <= perron(&bigger).unwrap().value + 1e-10);
    }

    #[test]
    fn line_sum_symmetric_equal_row_sums(n in 2usize..5, w in prop::collection::vec(0.05f64..1.0, 16), rho in -2.0f64..2.0) {
        // symmetric off-diagonal part, diagonal completing every row sum to rho
        let mut m = SquareMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { w[i.min(j) * 4 + i.max(j)] });
        let rs = m.row_sums();
        m = m.add_diagonal(&rs.iter().map(|r| rho - r).collect::<Vec<_>>());
        let p = perron(&m).unwrap();
        prop_assert!((p.value - rho).abs() < 1e-10);
        let s: f64 = p.right.iter().sum();
        prop_assert!(p.right.iter().all(|v| (v / s - 1.0 / n as f64).abs() < 1e-8));
    }

    #[test]
    fn geometric_mean_below_arithmetic(vals in prop::collection::vec(0.01f64..2.0, 2 * 2 * 8)) {
        let f = MatrixField::from_fn(2, 1, 8, |_, k| {
            SquareMatrix::from_fn(2, |i, j| vals[(i * 2 + j) * 8 + k] - if i == j { 1.0 } else { 0.0 })
        });
        let av = averaged_matrices(&f);
        let (geo, mean) = (&av.geo_space[0], &av.space_mean[0]);
        prop_assert!(geo[(0, 1)] <= mean[(0, 1)] + 1e-12 && geo[(1, 0)] <= mean[(1, 0)] + 1e-12);
        let completed = SquareMatrix::from_fn(2, |i, j| if i == j { mean[(i, i)] } else { geo[(i, j)] });
        prop_assert!(perron(&completed).unwrap().value <= perron(mean).unwrap().value + 1e-10);
    }
}
