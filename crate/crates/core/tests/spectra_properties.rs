mod common;

use common::{fast, system, Shape};
use coopeig::analysis::{geometric_space_bound, symmetrized, variational_rayleigh};
use coopeig::matrixkit::{MatrixField, ScalarField, SquareMatrix};
use coopeig::model::{PeriodicCell, System};
use coopeig::spectra::{lambda_one, lambda_prime, lambda_z_scan, principal_eigenpair, ZOptions};
use proptest::prelude::*;

fn shape(n: usize, time: bool) -> Shape {
    Shape { n, nt: 4, nx: 16, time, drift: true }
}

fn lambdas(sys: &System, zs: &[f64]) -> Vec<f64> {
    lambda_z_scan(sys, zs, &fast()).unwrap().into_iter().map(|r| r.lambda).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn concave_in_z(p in prop::collection::vec(0.0f64..1.0, 64), n in 1usize..4, time in any::<bool>()) {
        let sys = system(&p, shape(n, time));
        let zs = [-1.0, -0.4, 0.1, 0.5, 1.2];
        let v = lambdas(&sys, &zs);
        for i in 0..zs.len() {
            for j in i + 1..zs.len() {
                for k in j + 1..zs.len() {
                    let chord = ((zs[k] - zs[j]) * v[i] + (zs[j] - zs[i]) * v[k]) / (zs[k] - zs[i]);
                    prop_assert!(v[j] >= chord - 1e-6, "defect {} at {:?}", v[j] - chord, (i, j, k));
                }
            }
        }
    }

    #[test]
    fn lambda_prime_below_lambda_one(p in prop::collection::vec(0.0f64..1.0, 64), n in 1usize..4, time in any::<bool>()) {
        let sys = system(&p, shape(n, time));
        let lp = lambda_prime(&sys, &fast()).unwrap().lambda;
        let l1 = lambda_one(&sys, &ZOptions { tol: 1e-6, ..ZOptions::default() }, &fast()).unwrap().lambda_1;
        prop_assert!(lp <= l1 + 1e-8, "{lp} > {l1}");
    }

    #[test]
    fn more_coupling_lowers_lambda(p in prop::collection::vec(0.0f64..1.0, 64), n in 2usize..4, bump in 0.01f64..0.5,
                                   i in 0usize..3, j in 0usize..3, z in -1.0f64..1.0) {
        let sys = system(&p, shape(n, true));
        let (i, j) = (i % n, (i + 1 + j % (n - 1)) % n);
        let mut l = sys.l.clone();
        for t in 0..sys.cell.nt {
            for k in 0..sys.cell.nx {
                let v = l.entry(i, j, t, k);
                l.set_entry(i, j, t, k, v + bump * (1.0 + 0.5 * (k as f64).sin()));
            }
        }
        let before = principal_eigenpair(&sys, z, &fast()).unwrap().lambda;
        let after = principal_eigenpair(&sys.with_coupling(l), z, &fast()).unwrap().lambda;
        prop_assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn decoupled_bound(p in prop::collection::vec(0.0f64..1.0, 64), n in 2usize..4, z in -1.0f64..1.0) {
        let sys = system(&p, shape(n, true));
        let full = principal_eigenpair(&sys, z, &fast()).unwrap().lambda;
        let bound = (0..n).map(|i| principal_eigenpair(&sys.subsystem(&[i]), z, &fast()).unwrap().lambda).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(full <= bound + 1e-6, "{full} > {bound}");
    }

    #[test]
    fn scalar_self_adjoint_is_even(p in prop::collection::vec(0.0f64..1.0, 16), z in 0.1f64..1.5) {
        let mut sys = system(&p, Shape { n: 1, nt: 4, nx: 32, time: false, drift: false });
        sys.q = vec![ScalarField::constant(4, 32, 0.0)];
        let v = lambdas(&sys, &[z, -z]);
        prop_assert!((v[0] - v[1]).abs() < 1e-8, "{} vs {}", v[0], v[1]);
    }

    #[test]
    fn symmetric_coupling_peaks_at_zero(p in prop::collection::vec(0.0f64..1.0, 64), n in 1usize..4) {
        let mut sys = system(&p, Shape { n, nt: 4, nx: 16, time: false, drift: false });
        sys.l = sys.l.map(|_, _, m| m.add(&m.transpose()).scaled(0.5));
        let m = lambda_one(&sys, &ZOptions { tol: 1e-6, ..ZOptions::default() }, &fast()).unwrap();
        let lp = lambda_prime(&sys, &fast()).unwrap().lambda;
        prop_assert!(m.z_star.abs() < 1e-4, "z* = {}", m.z_star);
        prop_assert!((m.lambda_1 - lp).abs() < 1e-6);
    }

    #[test]
    fn rayleigh_matches_symmetrized_eigenvalue(p in prop::collection::vec(0.0f64..1.0, 64), n in 1usize..4) {
        let sys = system(&p, Shape { n, nt: 4, nx: 16, time: false, drift: false });
        let sym = symmetrized(&sys);
        let r = variational_rayleigh(&sym).unwrap();
        let lp = lambda_prime(&sym, &fast()).unwrap().lambda;
        prop_assert!((r - lp).abs() < 1e-8, "{r} vs {lp}");
    }

    #[test]
    fn geometric_mean_ordering(p in prop::collection::vec(0.0f64..1.0, 64), n in 2usize..4) {
        let mut sys = system(&p, Shape { n, nt: 4, nx: 16, time: true, drift: false });
        sys.q = (0..n).map(|i| ScalarField::from_fn(4, 16, |j, _| 0.3 * i as f64 + 0.2 * j as f64)).collect();
        let geo = geometric_space_bound(&sys, 0.0, &fast()).unwrap();
        let lp = lambda_prime(&sys, &fast()).unwrap().lambda;
        let avg = lambda_prime(&sys.space_averaged(), &fast()).unwrap().lambda;
        prop_assert!(geo >= lp - 1e-6 && geo >= avg - 1e-6, "geo {geo}, lp {lp}, avg {avg}");
    }
}

#[test]
fn refinement_contracts_error() {
    let p: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64 + 0.5) / 64.0).collect();
    let vals: Vec<f64> = [(8, 16), (16, 32), (32, 64), (64, 128)]
        .iter()
        .map(|&(nx, m)| {
            let sys = system(&p, Shape { n: 2, nt: 8, nx, time: true, drift: true });
            let opts = coopeig::spectra::EigenOptions { substeps: m, ..Default::default() };
            lambda_prime(&sys, &opts).unwrap().lambda
        })
        .collect();
    let d: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for w in d.windows(2) {
        assert!(w[0] / w[1] >= 1.8, "{vals:?}");
    }
}

#[test]
fn asymmetric_coupling_without_drift_breaks_evenness() {
    // fast switching between a heterogeneous and a slow diffuser: the limit
    // drift is not a periodic gradient
    let nx = 64;
    let cell = PeriodicCell::new(1.0, 1.0, 4, nx).unwrap();
    let eps = 0.05;
    let pfun = |k: usize| 0.5 + 0.3 * (2.0 * std::f64::consts::PI * cell.x_node(k)).sin();
    let base = System::constant(cell, &[1.0, 0.2], &[0.0, 0.0], &SquareMatrix::zeros(2));
    let l = MatrixField::from_fn(2, 4, nx, |_, k| {
        let p = pfun(k);
        SquareMatrix::from_rows(&[vec![-p / eps, (1.0 - p) / eps], vec![p / eps, -(1.0 - p) / eps]]).unwrap()
    });
    let mut sys = base.with_coupling(l);
    sys.a[0] = ScalarField::from_fn(4, nx, |_, k| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * cell.x_node(k)).cos());
    let lp = lambda_prime(&sys, &Default::default()).unwrap().lambda;
    let l1 = lambda_one(&sys, &ZOptions::default(), &Default::default()).unwrap().lambda_1;
    assert!(l1 - lp > 1e-4, "gap {}", l1 - lp);
}
