mod common;

use common::{fast, system, Shape};
use coopeig::matrixkit::{MatrixField, ScalarField};
use coopeig::model::PeriodicCell;
use coopeig::optimize::{eigen_derivative, optimize_mutation, rearrange, rearrange_samples, MutationTemplate, Objective, OptimizeOptions, PartitionCell};
use coopeig::spectra::principal_eigenpair;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permutation_optimum_not_beaten(r in prop::collection::vec(-1.0f64..1.0, 3), mu in prop::collection::vec(0.2f64..2.0, 3),
                                      seed in 0u64..1000, n in 2usize..4) {
        let cell = PeriodicCell::new(1.0, 1.0, 4, 1).unwrap();
        let base = system(&[0.5; 8], Shape { n, nt: 4, nx: 1, time: false, drift: false });
        let t = MutationTemplate {
            r: r[..n].iter().map(|v| ScalarField::constant(4, 1, *v)).collect(),
            mu: mu[..n].iter().map(|v| ScalarField::constant(4, 1, *v)).collect(),
            partition: vec![PartitionCell::whole(&cell)],
        };
        let oo = OptimizeOptions { seed, ..Default::default() };
        for obj in [Objective::Min, Objective::Max] {
            let res = optimize_mutation(&base, &t, obj, &oo, &fast()).unwrap();
            prop_assert_eq!(res.violations, 0);
            prop_assert!(res.certified);
        }
    }

    #[test]
    fn rearrangement_is_symmetric_decreasing_permutation(v in prop::collection::vec(-5.0f64..5.0, 4..40)) {
        let r = rearrange_samples(&v);
        let mut a = v.clone();
        let mut b = r.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        let n = r.len();
        let mid = n / 2;
        for k in mid..n - 1 {
            prop_assert!(r[k] >= r[k + 1]);
        }
        for k in 1..=mid {
            prop_assert!(r[k - 1] <= r[k]);
        }
    }

    #[test]
    fn scalar_rearrangement_lowers_eigenvalue(p in prop::collection::vec(0.0f64..1.0, 16), time in any::<bool>()) {
        let mut sys = system(&p, Shape { n: 1, nt: 4, nx: 16, time, drift: false });
        sys.a = vec![ScalarField::constant(4, 16, 0.7)];
        let rep = rearrange(&sys, &fast()).unwrap();
        prop_assert!(rep.multisets_preserved);
        prop_assert!(rep.lambda_rearranged <= rep.lambda_original + 1e-9, "{} > {}", rep.lambda_rearranged, rep.lambda_original);
    }

    #[test]
    fn adjoint_derivative_matches_differences(p in prop::collection::vec(0.0f64..1.0, 64), d in prop::collection::vec(-1.0f64..1.0, 4),
                                              z in -0.5f64..0.5) {
        let sys = system(&p, Shape { n: 2, nt: 4, nx: 12, time: true, drift: true });
        let dl = MatrixField::from_fn(2, 4, 12, |j, k| {
            coopeig::matrixkit::SquareMatrix::from_fn(2, |a, b| d[a * 2 + b] * (1.0 + 0.3 * ((j + k + a) as f64).cos()))
        });
        let h = 1e-4;
        let adj = eigen_derivative(&sys, z, &dl, &fast()).unwrap();
        let lp = principal_eigenpair(&sys.with_coupling(sys.l.add(&dl.scaled(h))), z, &fast()).unwrap().lambda;
        let lm = principal_eigenpair(&sys.with_coupling(sys.l.add(&dl.scaled(-h))), z, &fast()).unwrap().lambda;
        let fd = (lp - lm) / (2.0 * h);
        prop_assert!((adj - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{adj} vs {fd}");
    }
}
