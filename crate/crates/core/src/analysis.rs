//! Parameter scans against asymptotic predictions, explicit upper bounds and
//! the variational formula of the self-adjoint case.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{spatial_operator, Boundary, Layout};
use crate::error::{Error, Result};
use crate::matrixkit::{averaged_matrices, perron, structure_flags, MatrixField, ScalarField, SquareMatrix};
use crate::model::{PeriodicCell, System};
use crate::spectra::{lambda_z_extended, EigenOptions};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub param: f64,
    pub lambda: f64,
    pub predicted: Option<f64>,
    pub abs_err: Option<f64>,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanTable {
    pub parameter: String,
    pub tolerance: Option<f64>,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    /// Rows sorted by parameter. With a tolerance, each row's verdict is
    /// PASS/FAIL on `|lambda − predicted|`.
    pub fn new(parameter: &str, values: &[(f64, f64)], predicted: Option<f64>, tolerance: Option<f64>) -> Self {
        let mut rows: Vec<ScanRow> = values
            .iter()
            .map(|&(param, lambda)| {
                let abs_err = predicted.map(|p| (lambda - p).abs());
                let verdict = match (abs_err, tolerance) {
                    (Some(e), Some(t)) if e <= t => "PASS".to_string(),
                    (Some(_), Some(_)) => "FAIL".to_string(),
                    _ => "-".to_string(),
                };
                ScanRow { param, lambda, predicted, abs_err, verdict }
            })
            .collect();
        rows.sort_by(|a, b| a.param.total_cmp(&b.param));
        ScanTable { parameter: parameter.to_string(), tolerance, rows }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("param,lambda,predicted,abs_err,verdict\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.param, r.lambda, opt(r.predicted), opt(r.abs_err), r.verdict);
        }
        s
    }

    pub fn row_at(&self, param: f64) -> Option<&ScanRow> {
        self.rows.iter().find(|r| r.param == param)
    }
}

fn lambda_prime_ext(sys: &System, opts: &EigenOptions) -> Result<f64> {
    lambda_z_extended(sys, 0.0, opts)
}

fn scan(params: &[f64], f: impl Fn(f64) -> Result<f64> + Sync) -> Result<Vec<(f64, f64)>> {
    params.par_iter().map(|&p| Ok((p, f(p)?))).collect()
}

/// Coupling on the path between two fields: diagonals linear in `s`,
/// off-diagonals geometric (zero when either end is zero).
pub fn interpolate_coupling(l0: &MatrixField, l1: &MatrixField, s: f64) -> MatrixField {
    let mut out = l0.clone();
    let n = l0.n;
    for j in 0..l0.nt {
        for k in 0..l0.nx {
            for r in 0..n {
                for c in 0..n {
                    let (a, b) = (l0.entry(r, c, j, k), l1.entry(r, c, j, k));
                    let v = if r == c {
                        (1.0 - s) * a + s * b
                    } else if a <= 0.0 || b <= 0.0 {
                        0.0
                    } else {
                        a.powf(1.0 - s) * b.powf(s)
                    };
                    out.set_entry(r, c, j, k, v);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub table: ScanTable,
    /// Midpoint defects `λ(s_k) − chord`, one per interior grid point.
    pub defects: Vec<f64>,
    pub min_defect: f64,
    pub concave: bool,
    pub affine: bool,
    pub slope: f64,
}

const CONCAVITY_TOL: f64 = 1e-6;

/// `λ_{1,z}` along the coupling path from `sys0` to `sys1`.
pub fn concavity_in_l(sys0: &System, sys1: &System, s_grid: &[f64], z: f64, opts: &EigenOptions) -> Result<ConcavityReport> {
    if sys0.cell != sys1.cell || sys0.n != sys1.n || sys0.a != sys1.a || sys0.q != sys1.q || sys0.omega != sys1.omega {
        return Err(Error::ShapeMismatch("path endpoints must share cell, diffusion and advection".into()));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let vals = scan(&grid, |s| {
        let sys = sys0.with_coupling(interpolate_coupling(&sys0.l, &sys1.l, s));
        lambda_z_extended(&sys, z, opts)
    })?;
    let mut table = ScanTable::new("s", &vals, None, None);
    let mut defects = Vec::new();
    for k in 1..vals.len().saturating_sub(1) {
        let (s0, l0) = vals[k - 1];
        let (s1, l1) = vals[k];
        let (s2, l2) = vals[k + 1];
        let chord = ((s2 - s1) * l0 + (s1 - s0) * l2) / (s2 - s0);
        let d = l1 - chord;
        table.rows[k].verdict = if d >= -CONCAVITY_TOL { "concave".into() } else { "violation".into() };
        defects.push(d);
    }
    let min_defect = defects.iter().cloned().fold(f64::INFINITY, f64::min);
    let concave = defects.iter().all(|d| *d >= -CONCAVITY_TOL);
    let affine = defects.iter().all(|d| d.abs() < CONCAVITY_TOL);
    let (first, last) = (vals[0], vals[vals.len() - 1]);
    let slope = (last.1 - first.1) / (last.0 - first.0);
    Ok(ConcavityReport { table, defects, min_defect, concave, affine, slope })
}

/// `λ₁′` with `a ↦ d·a`; the prediction is `λ₁′` of the space-averaged system.
pub fn diffusion_scan(sys: &System, d_values: &[f64], tol: Option<f64>, opts: &EigenOptions) -> Result<ScanTable> {
    let predicted = lambda_prime_ext(&sys.space_averaged(), opts)?;
    let vals = scan(d_values, |d| lambda_prime_ext(&sys.scale_diffusion(d), opts))?;
    Ok(ScanTable::new("d", &vals, Some(predicted), tol))
}

/// Smallest ODE-mode `λ₁′` over the space nodes.
pub fn pointwise_ode_minimum(sys: &System, opts: &EigenOptions) -> Result<f64> {
    let vals = (0..sys.cell.nx).into_par_iter().map(|k| lambda_prime_ext(&sys.frozen_x(k), opts)).collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
}

/// `λ₁′` with `a ↦ ε²a`, `q ↦ εq`; the prediction is the pointwise ODE minimum.
pub fn vanishing_scan(sys: &System, eps_values: &[f64], tol: Option<f64>, opts: &EigenOptions) -> Result<ScanTable> {
    let predicted = pointwise_ode_minimum(sys, opts)?;
    let vals = scan(eps_values, |e| lambda_prime_ext(&sys.scale_diffusion(e * e).scale_advection(e), opts))?;
    Ok(ScanTable::new("eps", &vals, Some(predicted), tol))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyLimit {
    ToZero,
    ToInfinity,
}

/// Time average of the frozen-time elliptic eigenvalues.
pub fn frozen_time_average(sys: &System, opts: &EigenOptions) -> Result<f64> {
    let vals = (0..sys.cell.nt).into_par_iter().map(|j| lambda_prime_ext(&sys.frozen_t(j), opts)).collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `λ₁′` of `ω∂t − …`.
pub fn frequency_scan(sys: &System, omegas: &[f64], direction: FrequencyLimit, tol: Option<f64>, opts: &EigenOptions) -> Result<ScanTable> {
    let predicted = match direction {
        FrequencyLimit::ToInfinity => lambda_prime_ext(&sys.time_averaged(), opts)?,
        FrequencyLimit::ToZero => frozen_time_average(sys, opts)?,
    };
    let vals = scan(omegas, |w| lambda_prime_ext(&sys.with_omega(w), opts))?;
    Ok(ScanTable::new("omega", &vals, Some(predicted), tol))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub applicable: bool,
    pub note: Option<String>,
    pub bound: Option<f64>,
    pub holds: Option<bool>,
    pub equality: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub z: f64,
    pub lambda: f64,
    pub checks: Vec<BoundCheck>,
}

const BOUND_TOL: f64 = 1e-6;

/// `∂x(q_i − 2a_i z) = 0` on the samples.
pub fn divergence_free(sys: &System, z: f64) -> bool {
    sys.a.iter().zip(&sys.q).all(|(a, q)| {
        (0..sys.cell.nt).all(|j| {
            let g: Vec<f64> = (0..sys.cell.nx).map(|k| q.at(j, k) - 2.0 * a.at(j, k) * z).collect();
            let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo <= 1e-10 * (1.0 + hi.abs().max(lo.abs()))
        })
    })
}

fn space_mean_field(f: &ScalarField) -> ScalarField {
    ScalarField::from_fn(f.nt, 1, |j, _| f.time_row(j).iter().sum::<f64>() / f.nx as f64)
}

fn check(name: &str, lambda: f64, bound: Result<f64>) -> BoundCheck {
    match bound {
        Ok(b) => BoundCheck {
            name: name.into(),
            applicable: true,
            note: None,
            bound: Some(b),
            holds: Some(lambda <= b + BOUND_TOL),
            equality: Some((lambda - b).abs() <= BOUND_TOL),
        },
        Err(e) => BoundCheck { name: name.into(), applicable: false, note: Some(e.to_string()), bound: None, holds: None, equality: None },
    }
}

/// Line-sum-symmetric bound `−(1/N)(ΣΣ⟨l̂_ij⟩ + z Σ(⟨â_i⟩z − ⟨q̂_i⟩))`.
pub fn line_sum_bound(sys: &System, z: f64) -> Result<f64> {
    if !sys.l.samples().all(|m| structure_flags(&m).line_sum_symmetric) {
        return Err(Error::HypothesisNotMet("coupling is not line-sum-symmetric at every sample".into()));
    }
    if !divergence_free(sys, z) {
        return Err(Error::HypothesisNotMet("q − 2az is not constant in x".into()));
    }
    let n = sys.n as f64;
    let total: f64 = averaged_matrices(&sys.l).spacetime_mean.as_slice().iter().sum();
    let tilt: f64 = sys.a.iter().zip(&sys.q).map(|(a, q)| a.mean() * z - q.mean()).sum::<f64>() * z;
    Ok(-(total + tilt) / n)
}

/// `λ_{1,z}` of the space-homogeneous system with the geometric space mean `L^#`.
pub fn geometric_space_bound(sys: &System, z: f64, opts: &EigenOptions) -> Result<f64> {
    if !divergence_free(sys, z) {
        return Err(Error::HypothesisNotMet("q − 2az is not constant in x".into()));
    }
    let cell = PeriodicCell { nx: 1, ..sys.cell };
    let geo = averaged_matrices(&sys.l).geo_space;
    let ode = System {
        cell,
        n: sys.n,
        a: sys.a.iter().map(space_mean_field).collect(),
        q: sys.q.iter().map(space_mean_field).collect(),
        l: MatrixField::from_fn(sys.n, cell.nt, 1, |j, _| geo[j].clone()),
        reducible: sys.reducible,
        omega: sys.omega,
    };
    lambda_z_extended(&ode, z, opts)
}

/// `−λ_PF(L^♭ + diag(â z² − q̂ z))` for x-independent systems.
pub fn geometric_time_bound(sys: &System, z: f64) -> Result<f64> {
    if !sys.is_x_independent() {
        return Err(Error::HypothesisNotMet("coefficients depend on x".into()));
    }
    let flat = &averaged_matrices(&sys.l).geo_time[0];
    let d: Vec<f64> = sys.a.iter().zip(&sys.q).map(|(a, q)| a.mean() * z * z - q.mean() * z).collect();
    Ok(-perron(&flat.add_diagonal(&d))?.value)
}

pub fn bounds_report(sys: &System, z: f64, opts: &EigenOptions) -> Result<BoundsReport> {
    let lambda = lambda_z_extended(sys, z, opts)?;
    let checks = vec![
        check("line_sum_symmetric", lambda, line_sum_bound(sys, z)),
        check("geometric_space_mean", lambda, geometric_space_bound(sys, z, opts)),
        check("geometric_time_mean", lambda, geometric_time_bound(sys, z)),
    ];
    Ok(BoundsReport { z, lambda, checks })
}

fn self_adjoint_hypotheses(sys: &System) -> Result<()> {
    if !sys.is_time_independent() {
        return Err(Error::NotSelfAdjoint("coefficients depend on time".into()));
    }
    if sys.q.iter().any(|q| q.data.iter().any(|v| v.abs() > 1e-14)) {
        return Err(Error::NotSelfAdjoint("advection is present".into()));
    }
    if !sys.l.samples().all(|m| m.is_symmetric(1e-12)) {
        return Err(Error::NotSelfAdjoint("coupling is not symmetric".into()));
    }
    Ok(())
}

/// Minimum of the discrete Rayleigh quotient of `−∂x(a∂x) − L`, from a dense
/// symmetric eigendecomposition of the assembled operator.
pub fn variational_rayleigh(sys: &System) -> Result<f64> {
    sys.validate()?;
    self_adjoint_hypotheses(sys)?;
    let layout = Layout::new(sys, Boundary::Periodic)?;
    let (op, _) = spatial_operator(sys, 0.0, &layout, None);
    let dim = op.dim();
    if dim > 4096 {
        return Err(Error::ShapeMismatch(format!("dense symmetric solve limited to 4096 unknowns, got {dim}")));
    }
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for c in 0..dim {
        e[c] = 1.0;
        let col = op.apply(&e);
        for (r, v) in col.into_iter().enumerate() {
            k[(r, c)] = -v;
        }
        e[c] = 0.0;
    }
    let asym = (&k - k.transpose()).abs().max();
    if asym > 1e-9 * (1.0 + k.abs().max()) {
        return Err(Error::NotSelfAdjoint(format!("assembled operator asymmetry {asym:e}")));
    }
    let k = (&k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(k);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Same operators with `L` replaced by its symmetric part.
pub fn symmetrized(sys: &System) -> System {
    let n = sys.n;
    sys.with_coupling(sys.l.map(|_, _, m| SquareMatrix::from_fn(n, |r, c| 0.5 * (m[(r, c)] + m[(c, r)]))))
}

/// Gradient-drift reduction: when `q_i/a_i = 2z + Q′` for all species,
/// returns `z` and the self-adjoint system with coupling `L_{Q,z}` and no
/// advection.
pub fn gradient_drift_transform(sys: &System) -> Result<(f64, System)> {
    if !sys.is_time_independent() {
        return Err(Error::NotSelfAdjoint("coefficients depend on time".into()));
    }
    if !sys.l.samples().all(|m| m.is_symmetric(1e-12)) {
        return Err(Error::NotSelfAdjoint("coupling is not symmetric".into()));
    }
    let nx = sys.cell.nx;
    let ratio: Vec<f64> = (0..nx).map(|k| sys.q[0].at(0, k) / sys.a[0].at(0, k)).collect();
    for i in 1..sys.n {
        for k in 0..nx {
            let w = sys.q[i].at(0, k) / sys.a[i].at(0, k);
            if (w - ratio[k]).abs() > 1e-10 * (1.0 + w.abs()) {
                return Err(Error::NotSelfAdjoint("q_i/a_i differs between species".into()));
            }
        }
    }
    let z = 0.5 * ratio.iter().sum::<f64>() / nx as f64;
    let dq: Vec<f64> = ratio.iter().map(|w| w - 2.0 * z).collect();
    if sys.cell.ode_mode() {
        return Err(Error::NotSelfAdjoint("gradient drift needs a spatial grid".into()));
    }
    let h = sys.cell.h();
    let deriv = |f: &dyn Fn(usize) -> f64, k: usize| (f((k + 1) % nx) - f((k + nx - 1) % nx)) / (2.0 * h);
    let mut l = sys.l.clone();
    for i in 0..sys.n {
        let a = |k: usize| sys.a[i].at(0, k);
        for k in 0..nx {
            let flux = deriv(&|m| a(m) * dq[m], k);
            let da = deriv(&|m| a(m), k);
            let extra = 0.5 * flux - 0.25 * a(k) * dq[k] * dq[k] + z * da - z * a(k) * (z + dq[k]);
            for j in 0..sys.cell.nt {
                let v = l.entry(i, i, j, k) + extra;
                l.set_entry(i, i, j, k, v);
            }
        }
    }
    let nt = sys.cell.nt;
    let transformed = System { q: vec![ScalarField::constant(nt, nx, 0.0); sys.n], l, ..sys.clone() };
    Ok((z, transformed))
}
