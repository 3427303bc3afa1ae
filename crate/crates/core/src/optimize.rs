//! Mutation-structure optimization over doubly stochastic fields, Karlin
//! scans, eigenvalue derivatives and periodic rearrangement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ScanTable;
use crate::error::{Error, Result};
use crate::matrixkit::{check_decomposition, structure_flags, MatrixField, MutationDecomposition, ScalarField, SquareMatrix};
use crate::model::{PeriodicCell, System};
use crate::spectra::{eigen_derivative_impl, lambda_z_extended, EigenOptions};

/// Half-open `[t0, t1) × [x0, x1)` piece of the periodicity cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub t: [f64; 2],
    pub x: [f64; 2],
}

impl PartitionCell {
    pub fn whole(cell: &PeriodicCell) -> Self {
        PartitionCell { t: [0.0, cell.period_t], x: [0.0, cell.period_l] }
    }

    fn contains(&self, t: f64, x: f64) -> bool {
        self.t[0] <= t && t < self.t[1] && self.x[0] <= x && x < self.x[1]
    }
}

/// Index of the partition cell holding each `(j, k)` sample, time-major.
pub fn locate_samples(partition: &[PartitionCell], cell: &PeriodicCell) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(cell.nt * cell.nx);
    for j in 0..cell.nt {
        for k in 0..cell.nx {
            let (t, x) = (cell.t_node(j), cell.x_node(k));
            let hits: Vec<usize> = partition.iter().enumerate().filter(|(_, p)| p.contains(t, x)).map(|(i, _)| i).collect();
            if hits.len() != 1 {
                return Err(Error::ShapeMismatch(format!("sample (t={t}, x={x}) lies in {} partition cells", hits.len())));
            }
            out.push(hits[0]);
        }
    }
    Ok(out)
}

/// Piecewise-constant doubly stochastic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationField {
    pub partition: Vec<PartitionCell>,
    pub matrices: Vec<SquareMatrix>,
}

impl MutationField {
    pub fn sample(&self, cell: &PeriodicCell) -> Result<MatrixField> {
        if self.partition.len() != self.matrices.len() || self.matrices.is_empty() {
            return Err(Error::ShapeMismatch("one matrix per partition cell".into()));
        }
        for m in &self.matrices {
            if !structure_flags(m).doubly_stochastic {
                return Err(Error::InvalidDecomposition("mutation matrix is not doubly stochastic".into()));
            }
        }
        let idx = locate_samples(&self.partition, cell)?;
        let n = self.matrices[0].order();
        Ok(MatrixField::from_fn(n, cell.nt, cell.nx, |j, k| self.matrices[idx[j * cell.nx + k]].clone()))
    }
}

/// All permutations of `0..n` in lexicographic order (identity first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// `P[i][perm[i]] = 1`.
pub fn permutation_matrix(perm: &[usize]) -> SquareMatrix {
    SquareMatrix::from_fn(perm.len(), |i, j| if perm[i] == j { 1.0 } else { 0.0 })
}

/// `λ_{1,z}` with the block extension whenever the coupling is reducible.
fn lambda_any(sys: &System, z: f64, opts: &EigenOptions) -> Result<f64> {
    let irreducible = sys.is_irreducible();
    lambda_z_extended(&sys.with_reducible(!irreducible), z, opts)
}

fn coupling_from(r: &[ScalarField], mu: &[ScalarField], s: MatrixField) -> MatrixField {
    MutationDecomposition { r: r.to_vec(), mu: mu.to_vec(), s }.coupling()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KarlinReport {
    pub table: ScanTable,
    pub differences: Vec<f64>,
    pub min_difference: f64,
    pub nondecreasing: bool,
    pub strictly_increasing: bool,
    pub r_depends_on_x: bool,
}

/// The system `s·P − diag(r) − s(S − I)diag(μ)`: time derivative, diffusion,
/// advection and mutation all scaled by `s`.
pub fn karlin_system(sys: &System, dec: &MutationDecomposition, s: f64) -> System {
    let scaled = MutationDecomposition {
        r: vec![ScalarField::constant(sys.cell.nt, sys.cell.nx, 0.0); sys.n],
        mu: dec.mu.iter().map(|m| m.map(|v| v * s)).collect(),
        s: dec.s.clone(),
    };
    let mutation = scaled.coupling();
    let growth = coupling_from(&dec.r, &vec![ScalarField::constant(sys.cell.nt, sys.cell.nx, 0.0); sys.n], dec.s.clone());
    sys.scale_diffusion(s).scale_advection(s).with_omega(sys.omega * s).with_coupling(mutation.add(&growth))
}

pub fn karlin_scan(sys: &System, dec: &MutationDecomposition, s_grid: &[f64], opts: &EigenOptions) -> Result<KarlinReport> {
    let chk = check_decomposition(dec, &sys.l)?;
    if !chk.valid {
        return Err(Error::InvalidDecomposition(format!("decomposition deviates from the coupling by {:e}", chk.deviation)));
    }
    if s_grid.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(Error::Schema("karlin grid must lie in (0, 1]".into()));
    }
    let vals: Vec<(f64, f64)> =
        s_grid.par_iter().map(|&s| Ok((s, lambda_any(&karlin_system(sys, dec, s), 0.0, opts)?))).collect::<Result<_>>()?;
    let mut table = ScanTable::new("s", &vals, None, None);
    let differences: Vec<f64> = table.rows.windows(2).map(|w| w[1].lambda - w[0].lambda).collect();
    for (row, d) in table.rows.iter_mut().skip(1).zip(&differences) {
        row.verdict = if *d >= -1e-8 { "nondecreasing".into() } else { "decrease".into() };
    }
    let min_difference = differences.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_depends_on_x = dec.r.iter().any(|r| !r.is_x_independent());
    Ok(KarlinReport {
        table,
        nondecreasing: min_difference >= -1e-8,
        strictly_increasing: min_difference > 0.0,
        min_difference,
        differences,
        r_depends_on_x,
    })
}

/// `dλ_{1,z}(L + α δL)/dα` at α = 0 from direct and adjoint eigenfunctions.
pub fn eigen_derivative(sys: &System, z: f64, dl: &MatrixField, opts: &EigenOptions) -> Result<f64> {
    eigen_derivative_impl(sys, z, dl, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Min,
    Max,
}

impl Objective {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Min => a < b,
            Objective::Max => a > b,
        }
    }
}

/// Fixed growth rates and mutation intensities; the mutation matrix is free.
#[derive(Clone, Debug, PartialEq)]
pub struct MutationTemplate {
    pub r: Vec<ScalarField>,
    pub mu: Vec<ScalarField>,
    pub partition: Vec<PartitionCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub z: f64,
    pub certificate_samples: usize,
    pub seed: u64,
    pub local_search: bool,
    pub max_enumeration: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { z: 0.0, certificate_samples: 20, seed: 0, local_search: false, max_enumeration: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MutationOptimum {
    pub objective: Objective,
    pub partition: Vec<PartitionCell>,
    /// One permutation (as an index array) per partition cell.
    pub assignment: Vec<Vec<usize>>,
    pub value: f64,
    pub mode: String,
    pub evaluations: usize,
    /// Values at random interior doubly stochastic fields.
    pub certificate: Vec<f64>,
    pub violations: usize,
    /// True only for an enumeration optimum that no sample beat.
    pub certified: bool,
}

struct Evaluator<'a> {
    base: &'a System,
    template: &'a MutationTemplate,
    cells: Vec<usize>,
    z: f64,
    opts: &'a EigenOptions,
}

impl Evaluator<'_> {
    fn value(&self, matrices: &[SquareMatrix]) -> Result<f64> {
        let cell = &self.base.cell;
        let n = self.base.n;
        let s = MatrixField::from_fn(n, cell.nt, cell.nx, |j, k| matrices[self.cells[j * cell.nx + k]].clone());
        let l = coupling_from(&self.template.r, &self.template.mu, s);
        lambda_any(&self.base.with_coupling(l), self.z, self.opts)
    }
}

/// Optimizes `λ_{1,z}` over permutation-valued fields that are constant on
/// each partition cell, by enumeration (or single-cell local search), then
/// samples random interior doubly stochastic fields as a certificate.
pub fn optimize_mutation(
    base: &System,
    template: &MutationTemplate,
    objective: Objective,
    oo: &OptimizeOptions,
    opts: &EigenOptions,
) -> Result<MutationOptimum> {
    let n = base.n;
    if template.r.len() != n || template.mu.len() != n {
        return Err(Error::ShapeMismatch("r and mu need one field per species".into()));
    }
    let cells = locate_samples(&template.partition, &base.cell)?;
    let ev = Evaluator { base, template, cells, z: oo.z, opts };
    let perms = permutations(n);
    let mats: Vec<SquareMatrix> = perms.iter().map(|p| permutation_matrix(p)).collect();
    let pc = template.partition.len();
    let total = (perms.len() as f64).powi(pc as i32);
    let (assignment, value, evaluations, mode) = if total <= oo.max_enumeration as f64 && !oo.local_search {
        let total = total as usize;
        let decode = |mut idx: usize| {
            (0..pc)
                .map(|_| {
                    let d = idx % perms.len();
                    idx /= perms.len();
                    d
                })
                .collect::<Vec<_>>()
        };
        let vals = (0..total)
            .into_par_iter()
            .map(|i| {
                let choice = decode(i);
                ev.value(&choice.iter().map(|&c| mats[c].clone()).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if objective.better(*v, vals[best]) {
                best = i;
            }
        }
        (decode(best), vals[best], total, "enumeration")
    } else if oo.local_search {
        let mut choice = vec![0usize; pc];
        let mut cur = ev.value(&vec![mats[0].clone(); pc])?;
        let mut evaluations = 1;
        loop {
            let moves: Vec<(usize, usize)> = (0..pc).flat_map(|c| (0..perms.len()).map(move |p| (c, p))).filter(|&(c, p)| choice[c] != p).collect();
            let vals = moves
                .par_iter()
                .map(|&(c, p)| {
                    let mut cand = choice.clone();
                    cand[c] = p;
                    ev.value(&cand.iter().map(|&q| mats[q].clone()).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<f64>>>()?;
            evaluations += vals.len();
            let mut best: Option<usize> = None;
            for (i, v) in vals.iter().enumerate() {
                if objective.better(*v, best.map_or(cur, |b| vals[b])) {
                    best = Some(i);
                }
            }
            match best {
                Some(i) if objective.better(vals[i], cur) => {
                    choice[moves[i].0] = moves[i].1;
                    cur = vals[i];
                }
                _ => break,
            }
        }
        (choice, cur, evaluations, "local_search")
    } else {
        return Err(Error::EnumerationTooLarge(format!("{} permutation assignments exceed the limit {}", total, oo.max_enumeration)));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(oo.seed);
    let samples: Vec<Vec<SquareMatrix>> = (0..oo.certificate_samples)
        .map(|_| {
            (0..pc)
                .map(|_| {
                    let w: Vec<f64> = (0..mats.len()).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let sum: f64 = w.iter().sum();
                    mats.iter().zip(&w).fold(SquareMatrix::zeros(n), |acc, (m, wi)| acc.add(&m.scaled(wi / sum)))
                })
                .collect()
        })
        .collect();
    let certificate = samples.par_iter().map(|s| ev.value(s)).collect::<Result<Vec<f64>>>()?;
    let violations = certificate
        .iter()
        .filter(|v| match objective {
            Objective::Min => **v < value - 1e-6,
            Objective::Max => **v > value + 1e-6,
        })
        .count();
    Ok(MutationOptimum {
        objective,
        partition: template.partition.clone(),
        assignment: assignment.iter().map(|&c| perms[c].clone()).collect(),
        value,
        mode: mode.into(),
        evaluations: evaluations + certificate.len(),
        certified: mode == "enumeration" && violations == 0,
        certificate,
        violations,
    })
}

/// Node order for the symmetric decreasing rearrangement: by distance to the
/// cell midpoint, left node first on ties.
pub fn rearrangement_order(nx: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..nx).collect();
    idx.sort_by_key(|&k| ((2 * k as i64 - nx as i64).abs(), k));
    idx
}

/// Periodic rearrangement of one row of samples.
pub fn rearrange_samples(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; values.len()];
    for (v, k) in sorted.into_iter().zip(rearrangement_order(values.len())) {
        out[k] = v;
    }
    out
}

/// Entrywise rearrangement in x at every time node.
pub fn rearrange_field(f: &MatrixField) -> MatrixField {
    let mut out = f.clone();
    for r in 0..f.n {
        for c in 0..f.n {
            for j in 0..f.nt {
                let row: Vec<f64> = (0..f.nx).map(|k| f.entry(r, c, j, k)).collect();
                for (k, v) in rearrange_samples(&row).into_iter().enumerate() {
                    out.set_entry(r, c, j, k, v);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RearrangeReport {
    pub original: MatrixField,
    pub rearranged: MatrixField,
    pub lambda_original: f64,
    pub lambda_rearranged: f64,
    pub holds: bool,
    pub multisets_preserved: bool,
}

fn sorted_rows(f: &MatrixField) -> Vec<Vec<u64>> {
    let mut rows = Vec::new();
    for r in 0..f.n {
        for c in 0..f.n {
            for j in 0..f.nt {
                let mut v: Vec<u64> = (0..f.nx).map(|k| f.entry(r, c, j, k).to_bits()).collect();
                v.sort_unstable();
                rows.push(v);
            }
        }
    }
    rows
}

pub fn rearrange(sys: &System, opts: &EigenOptions) -> Result<RearrangeReport> {
    sys.validate()?;
    if sys.cell.ode_mode() {
        return Err(Error::HypothesisNotMet("rearrangement needs a spatial grid".into()));
    }
    for a in &sys.a {
        if a.data.iter().any(|v| *v != a.data[0]) {
            return Err(Error::HypothesisNotMet("diffusion must be constant".into()));
        }
    }
    if sys.q.iter().any(|q| q.data.iter().any(|v| *v != 0.0)) {
        return Err(Error::HypothesisNotMet("advection must vanish".into()));
    }
    let rearranged = rearrange_field(&sys.l);
    let lambda_original = lambda_any(sys, 0.0, opts)?;
    let lambda_rearranged = lambda_any(&sys.with_coupling(rearranged.clone()), 0.0, opts)?;
    Ok(RearrangeReport {
        multisets_preserved: sorted_rows(&sys.l) == sorted_rows(&rearranged),
        holds: lambda_original >= lambda_rearranged - 1e-6,
        original: sys.l.clone(),
        rearranged,
        lambda_original,
        lambda_rearranged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(nx: usize) -> PeriodicCell {
        PeriodicCell::new(1.0, 1.0, 4, nx).unwrap()
    }

    #[test]
    fn permutation_count_and_order() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
    }

    #[test]
    fn rearrangement_even_and_odd() {
        assert_eq!(rearrangement_order(4), vec![2, 1, 3, 0]);
        assert_eq!(rearrangement_order(5), vec![2, 3, 1, 4, 0]);
        assert_eq!(rearrange_samples(&[4.0, 1.0, 3.0, 2.0]), vec![1.0, 3.0, 4.0, 2.0]);
    }

    #[test]
    fn rearrangement_fixed_point() {
        let row = rearrange_samples(&[0.3, -1.0, 2.0, 5.0, 0.1, 7.0, 0.0, 1.0]);
        assert_eq!(rearrange_samples(&row), row);
        for k in 1..4 {
            assert!(row[4 - k] >= row[4 - k - 1] && row[4 + k] <= row[4 + k - 1]);
        }
    }

    #[test]
    fn mutation_benchmark_endpoints() {
        let c = cell(8);
        let base = System::constant(c, &[1.0, 1.0], &[0.0, 0.0], &SquareMatrix::zeros(2));
        let t = MutationTemplate {
            r: vec![ScalarField::constant(4, 8, 1.0), ScalarField::constant(4, 8, 0.0)],
            mu: vec![ScalarField::constant(4, 8, 1.0); 2],
            partition: vec![PartitionCell::whole(&c)],
        };
        let opts = EigenOptions::default();
        let oo = OptimizeOptions { certificate_samples: 5, ..Default::default() };
        let min = optimize_mutation(&base, &t, Objective::Min, &oo, &opts).unwrap();
        assert_eq!(min.assignment, vec![vec![0, 1]]);
        assert!((min.value + 1.0).abs() < 1e-9);
        assert!(min.certified);
        let max = optimize_mutation(&base, &t, Objective::Max, &oo, &opts).unwrap();
        assert_eq!(max.assignment, vec![vec![1, 0]]);
        assert!((max.value - (-(1.0 + 5f64.sqrt()) / 2.0 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn enumeration_limit() {
        let c = PeriodicCell::new(1.0, 1.0, 8, 8).unwrap();
        let base = System::constant(c, &[1.0; 3], &[0.0; 3], &SquareMatrix::zeros(3));
        let partition = (0..8).map(|j| PartitionCell { t: [j as f64 / 8.0, (j + 1) as f64 / 8.0], x: [0.0, 1.0] }).collect();
        let t = MutationTemplate { r: vec![ScalarField::constant(8, 8, 0.0); 3], mu: vec![ScalarField::constant(8, 8, 1.0); 3], partition };
        let e = optimize_mutation(&base, &t, Objective::Min, &OptimizeOptions::default(), &EigenOptions::default()).unwrap_err();
        assert_eq!(e.code(), "ENUMERATION_TOO_LARGE");
    }

    #[test]
    fn karlin_zero_growth_is_zero() {
        let c = cell(16);
        let ex = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let dec = MutationDecomposition {
            r: vec![ScalarField::constant(4, 16, 0.0); 2],
            mu: vec![ScalarField::constant(4, 16, 1.0), ScalarField::constant(4, 16, 2.0)],
            s: MatrixField::constant(&ex, 4, 16),
        };
        let sys = System::constant(c, &[1.0, 0.5], &[0.0, 0.0], &SquareMatrix::zeros(2)).with_coupling(dec.coupling());
        let rep = karlin_scan(&sys, &dec, &[0.25, 0.5, 1.0], &EigenOptions::default()).unwrap();
        assert!(rep.table.rows.iter().all(|r| r.lambda.abs() < 1e-10));
    }

    #[test]
    fn karlin_rejects_bad_decomposition() {
        let c = cell(8);
        let dec = MutationDecomposition {
            r: vec![ScalarField::constant(4, 8, 0.0); 2],
            mu: vec![ScalarField::constant(4, 8, 1.0); 2],
            s: MatrixField::constant(&SquareMatrix::identity(2), 4, 8),
        };
        let sys = System::constant(c, &[1.0, 1.0], &[0.0, 0.0], &SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        assert_eq!(karlin_scan(&sys, &dec, &[1.0], &EigenOptions::default()).unwrap_err().code(), "INVALID_DECOMPOSITION");
    }

    #[test]
    fn derivative_of_identity_direction() {
        let l = SquareMatrix::from_rows(&[vec![0.2, 1.0], vec![0.5, -0.1]]).unwrap();
        let mut sys = System::constant(PeriodicCell::new(1.0, 1.0, 8, 8).unwrap(), &[1.0, 0.7], &[0.3, 0.0], &l);
        sys.l = MatrixField::from_fn(2, 8, 8, |j, k| l.shifted(0.3 * ((j + 2 * k) as f64).sin()));
        let dl = MatrixField::constant(&SquareMatrix::identity(2), 8, 8);
        // implicit Euler is shift-equivariant only up to O(dt²) after extrapolation
        let d = eigen_derivative(&sys, 0.2, &dl, &EigenOptions::default()).unwrap();
        assert!((d + 1.0).abs() < 1e-5, "{d}");
        let auto = sys.frozen_t(3);
        let d = eigen_derivative(&auto, 0.2, &dl, &EigenOptions::default()).unwrap();
        assert!((d + 1.0).abs() < 1e-10, "{d}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let l = SquareMatrix::from_rows(&[vec![0.2, 1.0], vec![0.5, -0.1]]).unwrap();
        let mut sys = System::constant(PeriodicCell::new(1.0, 1.0, 8, 8).unwrap(), &[1.0, 0.7], &[0.3, 0.0], &l);
        sys.l = MatrixField::from_fn(2, 8, 8, |j, k| l.shifted(0.3 * ((j + 2 * k) as f64).sin()));
        let dl = MatrixField::from_fn(2, 8, 8, |j, k| SquareMatrix::from_fn(2, |r, c| (((r + 2 * c + j * k) as f64) * 0.7).cos()));
        let opts = EigenOptions { substeps: 64, ..Default::default() };
        let d = eigen_derivative(&sys, 0.2, &dl, &opts).unwrap();
        let h = 1e-4;
        let at = |a: f64| crate::spectra::principal_eigenpair(&sys.with_coupling(sys.l.add(&dl.scaled(a))), 0.2, &opts).unwrap().lambda;
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(((d - fd) / fd).abs() < 1e-4, "{d} vs {fd}");
    }
}
