//! Coefficient descriptors, sampled systems and validation of the standing
//! structural assumptions (ellipticity, cooperativity, irreducibility).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::matrixkit::ScalarField;
use crate::matrixkit::{is_irreducible, strongly_connected_components, MatrixField, SquareMatrix, OFFDIAG_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCell {
    #[serde(rename = "T")]
    pub period_t: f64,
    #[serde(rename = "L")]
    pub period_l: f64,
    pub nt: usize,
    pub nx: usize,
}

impl PeriodicCell {
    /// `nx = 1` selects ODE mode (no spatial structure).
    pub fn new(period_t: f64, period_l: f64, nt: usize, nx: usize) -> Result<Self> {
        let c = PeriodicCell { period_t, period_l, nt, nx };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.period_t > 0.0 && self.period_t.is_finite()) {
            return Err(Error::Schema(format!("cell.T must be positive, got {}", self.period_t)));
        }
        if !(self.period_l > 0.0 && self.period_l.is_finite()) {
            return Err(Error::Schema(format!("cell.L must be positive, got {}", self.period_l)));
        }
        if self.nt < 4 {
            return Err(Error::Schema(format!("cell.nt must be at least 4, got {}", self.nt)));
        }
        if self.nx != 1 && self.nx < 4 {
            return Err(Error::Schema(format!("cell.nx must be 1 (ODE mode) or at least 4, got {}", self.nx)));
        }
        Ok(())
    }

    pub fn t_node(&self, j: usize) -> f64 {
        j as f64 * self.period_t / self.nt as f64
    }

    pub fn x_node(&self, k: usize) -> f64 {
        k as f64 * self.period_l / self.nx as f64
    }

    pub fn h(&self) -> f64 {
        self.period_l / self.nx as f64
    }

    pub fn ode_mode(&self) -> bool {
        self.nx == 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    #[default]
    Cos,
    Sin,
}

impl Trig {
    fn eval(self, arg: f64) -> f64 {
        match self {
            Trig::Cos => arg.cos(),
            Trig::Sin => arg.sin(),
        }
    }
}

/// One term `amplitude · f(2πk t/T) · g(2πm x/L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    #[serde(default)]
    pub k: i64,
    #[serde(default)]
    pub m: i64,
    #[serde(default)]
    pub t: Trig,
    #[serde(default)]
    pub x: Trig,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    /// Half-open time interval; the whole period when absent.
    #[serde(default)]
    pub t: Option<[f64; 2]>,
    /// Half-open space interval; the whole period when absent.
    #[serde(default)]
    pub x: Option<[f64; 2]>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefficientDescriptor {
    Constant {
        value: f64,
    },
    /// `floor` clips the sum from below (positive parts).
    Fourier {
        terms: Vec<FourierTerm>,
        #[serde(default)]
        floor: Option<f64>,
    },
    /// `nt` rows of `nx` samples.
    Grid {
        values: Vec<Vec<f64>>,
    },
    /// First matching piece wins; `smooth` applies that many passes of the
    /// periodic `[1/4, 1/2, 1/4]` filter in x.
    Piecewise {
        pieces: Vec<Piece>,
        #[serde(default)]
        default: f64,
        #[serde(default)]
        smooth: usize,
    },
}

impl CoefficientDescriptor {
    pub fn constant(value: f64) -> Self {
        CoefficientDescriptor::Constant { value }
    }
}

fn in_interval(v: f64, iv: &Option<[f64; 2]>) -> bool {
    match iv {
        None => true,
        Some([lo, hi]) => *lo <= v && v < *hi,
    }
}

fn smooth_x(f: &mut ScalarField) {
    let nx = f.nx;
    if nx < 3 {
        return;
    }
    for j in 0..f.nt {
        let row = f.time_row(j).to_vec();
        for k in 0..nx {
            let v = 0.25 * row[(k + nx - 1) % nx] + 0.5 * row[k] + 0.25 * row[(k + 1) % nx];
            f.set(j, k, v);
        }
    }
}

/// Samples a descriptor at the `(jT/nt, kL/nx)` nodes of the cell.
pub fn sample(desc: &CoefficientDescriptor, cell: &PeriodicCell) -> Result<ScalarField> {
    let (nt, nx) = (cell.nt, cell.nx);
    let f = match desc {
        CoefficientDescriptor::Constant { value } => ScalarField::constant(nt, nx, *value),
        CoefficientDescriptor::Fourier { terms, floor } => ScalarField::from_fn(nt, nx, |j, k| {
            let (t, x) = (cell.t_node(j), cell.x_node(k));
            let v: f64 = terms
                .iter()
                .map(|tm| {
                    tm.amplitude
                        * tm.t.eval(2.0 * PI * tm.k as f64 * t / cell.period_t)
                        * tm.x.eval(2.0 * PI * tm.m as f64 * x / cell.period_l)
                })
                .sum();
            floor.map_or(v, |f| v.max(f))
        }),
        CoefficientDescriptor::Grid { values } => {
            if values.len() != nt || values.iter().any(|r| r.len() != nx) {
                let cols = values.first().map_or(0, |r| r.len());
                return Err(Error::Schema(format!("grid payload is {}x{cols}, cell expects {nt}x{nx}", values.len())));
            }
            ScalarField::from_fn(nt, nx, |j, k| values[j][k])
        }
        CoefficientDescriptor::Piecewise { pieces, default, smooth } => {
            let mut f = ScalarField::from_fn(nt, nx, |j, k| {
                let (t, x) = (cell.t_node(j), cell.x_node(k));
                pieces.iter().find(|p| in_interval(t, &p.t) && in_interval(x, &p.x)).map_or(*default, |p| p.value)
            });
            for _ in 0..*smooth {
                smooth_x(&mut f);
            }
            f
        }
    };
    if f.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema("descriptor produced non-finite samples".into()));
    }
    Ok(f)
}

/// Descriptor-level description of the operator
/// `ω∂t − ∂x(a∂x) + q∂x − L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub species: usize,
    pub cell: PeriodicCell,
    pub diffusion: Vec<CoefficientDescriptor>,
    pub advection: Vec<CoefficientDescriptor>,
    pub coupling: Vec<Vec<CoefficientDescriptor>>,
    #[serde(default)]
    pub reducible: bool,
    #[serde(default = "one")]
    pub time_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SystemSpec {
    pub fn sample(&self) -> Result<System> {
        self.cell.check()?;
        let n = self.species;
        if n == 0 || n > crate::matrixkit::MAX_ORDER {
            return Err(Error::Schema(format!("species must be in 1..=64, got {n}")));
        }
        if self.diffusion.len() != n {
            return Err(Error::Schema(format!("diffusion has {} entries, expected {n}", self.diffusion.len())));
        }
        if self.advection.len() != n {
            return Err(Error::Schema(format!("advection has {} entries, expected {n}", self.advection.len())));
        }
        if self.coupling.len() != n || self.coupling.iter().any(|r| r.len() != n) {
            return Err(Error::Schema(format!("coupling must be {n}x{n}")));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::Schema("time_scale must be positive".into()));
        }
        let a = self.diffusion.iter().map(|d| sample(d, &self.cell)).collect::<Result<Vec<_>>>()?;
        let q = self.advection.iter().map(|d| sample(d, &self.cell)).collect::<Result<Vec<_>>>()?;
        let entries = self
            .coupling
            .iter()
            .map(|r| r.iter().map(|d| sample(d, &self.cell)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(System {
            cell: self.cell,
            n,
            a,
            q,
            l: MatrixField::from_entries(&entries),
            reducible: self.reducible,
            omega: self.time_scale,
        })
    }

    /// Samples, then validates.
    pub fn build(&self) -> Result<System> {
        let s = self.sample()?;
        s.validate()?;
        Ok(s)
    }
}

/// Sampled operator; the numerical core works on this type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub cell: PeriodicCell,
    pub n: usize,
    pub a: Vec<ScalarField>,
    pub q: Vec<ScalarField>,
    pub l: MatrixField,
    /// Explicitly accepted as reducible.
    pub reducible: bool,
    /// Time-derivative factor ω in `ω∂t`.
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub min_diffusion: f64,
    pub min_offdiag: f64,
    pub irreducible: bool,
    pub flagged_reducible: bool,
    pub time_independent: bool,
    pub x_independent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockStructure {
    pub permutation: Vec<usize>,
    pub block_bounds: Vec<usize>,
}

impl BlockStructure {
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        self.block_bounds.windows(2).map(|w| self.permutation[w[0]..w[1]].to_vec()).collect()
    }

    pub fn count(&self) -> usize {
        self.block_bounds.len() - 1
    }
}

impl System {
    /// Constant coefficients on the given cell.
    pub fn constant(cell: PeriodicCell, a: &[f64], q: &[f64], l: &SquareMatrix) -> Self {
        let n = l.order();
        assert!(a.len() == n && q.len() == n, "coefficient lengths");
        System {
            cell,
            n,
            a: a.iter().map(|v| ScalarField::constant(cell.nt, cell.nx, *v)).collect(),
            q: q.iter().map(|v| ScalarField::constant(cell.nt, cell.nx, *v)).collect(),
            l: MatrixField::constant(l, cell.nt, cell.nx),
            reducible: false,
            omega: 1.0,
        }
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_system(self)
    }

    pub fn is_time_independent(&self) -> bool {
        self.a.iter().chain(&self.q).all(|f| f.is_time_independent()) && self.l.is_time_independent()
    }

    pub fn is_x_independent(&self) -> bool {
        self.a.iter().chain(&self.q).all(|f| f.is_x_independent()) && self.l.is_x_independent()
    }

    pub fn max_matrix(&self) -> SquareMatrix {
        self.l.max_matrix()
    }

    pub fn is_irreducible(&self) -> bool {
        is_irreducible(&self.max_matrix())
    }

    pub fn with_coupling(&self, l: MatrixField) -> Self {
        assert_eq!((l.n, l.nt, l.nx), (self.n, self.cell.nt, self.cell.nx), "coupling shape");
        System { l, ..self.clone() }
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        System { omega, ..self.clone() }
    }

    pub fn with_reducible(&self, reducible: bool) -> Self {
        System { reducible, ..self.clone() }
    }

    pub fn scale_diffusion(&self, d: f64) -> Self {
        System { a: self.a.iter().map(|f| f.map(|v| v * d)).collect(), ..self.clone() }
    }

    pub fn scale_advection(&self, e: f64) -> Self {
        System { q: self.q.iter().map(|f| f.map(|v| v * e)).collect(), ..self.clone() }
    }

    /// Species restricted to `idx` (in that order).
    pub fn subsystem(&self, idx: &[usize]) -> Self {
        System {
            cell: self.cell,
            n: idx.len(),
            a: idx.iter().map(|&i| self.a[i].clone()).collect(),
            q: idx.iter().map(|&i| self.q[i].clone()).collect(),
            l: self.l.restrict(idx),
            reducible: false,
            omega: self.omega,
        }
    }

    /// The x-homogeneous system obtained by averaging every coefficient in
    /// space, in ODE mode.
    pub fn space_averaged(&self) -> Self {
        let cell = PeriodicCell { nx: 1, ..self.cell };
        let avg = |f: &ScalarField| ScalarField::from_fn(f.nt, 1, |j, _| f.time_row(j).iter().sum::<f64>() / f.nx as f64);
        let lbar = crate::matrixkit::averaged_matrices(&self.l).space_mean;
        System {
            cell,
            n: self.n,
            a: self.a.iter().map(avg).collect(),
            q: self.q.iter().map(avg).collect(),
            l: MatrixField::from_fn(self.n, cell.nt, 1, |j, _| lbar[j].clone()),
            reducible: self.reducible,
            omega: self.omega,
        }
    }

    /// The time-averaged (autonomous) system.
    pub fn time_averaged(&self) -> Self {
        let avg = |f: &ScalarField| {
            ScalarField::from_fn(f.nt, f.nx, |_, k| (0..f.nt).map(|j| f.at(j, k)).sum::<f64>() / f.nt as f64)
        };
        let lhat = crate::matrixkit::averaged_matrices(&self.l).time_mean;
        System {
            a: self.a.iter().map(avg).collect(),
            q: self.q.iter().map(avg).collect(),
            l: MatrixField::from_fn(self.n, self.cell.nt, self.cell.nx, |_, k| lhat[k].clone()),
            ..self.clone()
        }
    }

    /// ODE-mode system `ω d/dt − L(·, x_k)` at one space node.
    pub fn frozen_x(&self, k: usize) -> Self {
        let cell = PeriodicCell { nx: 1, ..self.cell };
        let col = |f: &ScalarField| ScalarField::from_fn(f.nt, 1, |j, _| f.at(j, k));
        System {
            cell,
            n: self.n,
            a: self.a.iter().map(col).collect(),
            q: self.q.iter().map(col).collect(),
            l: MatrixField::from_fn(self.n, cell.nt, 1, |j, _| self.l.at(j, k)),
            reducible: self.reducible,
            omega: self.omega,
        }
    }

    /// Autonomous system with the coefficients frozen at time node `j`.
    pub fn frozen_t(&self, j: usize) -> Self {
        let row = |f: &ScalarField| ScalarField::from_fn(f.nt, f.nx, |_, k| f.at(j, k));
        System {
            a: self.a.iter().map(row).collect(),
            q: self.q.iter().map(row).collect(),
            l: MatrixField::from_fn(self.n, self.cell.nt, self.cell.nx, |_, k| self.l.at(j, k)),
            ..self.clone()
        }
    }
}

pub fn validate_system(s: &System) -> Result<ValidationReport> {
    s.cell.check()?;
    let shapes_ok = s.a.len() == s.n
        && s.q.len() == s.n
        && (s.l.n, s.l.nt, s.l.nx) == (s.n, s.cell.nt, s.cell.nx)
        && s.a.iter().chain(&s.q).all(|f| (f.nt, f.nx) == (s.cell.nt, s.cell.nx));
    if !shapes_ok {
        return Err(Error::Schema("sample arrays do not match the cell".into()));
    }
    let all_finite = s.a.iter().chain(&s.q).all(|f| f.data.iter().all(|v| v.is_finite()))
        && s.l.data.iter().all(|v| v.is_finite());
    if !all_finite || !(s.omega > 0.0 && s.omega.is_finite()) {
        return Err(Error::Schema("non-finite coefficient sample".into()));
    }
    let mut min_diffusion = f64::INFINITY;
    for (i, a) in s.a.iter().enumerate() {
        let m = a.min();
        if !(m > 0.0) {
            return Err(Error::Ellipticity(format!("diffusion[{i}] has minimum sample {m}")));
        }
        min_diffusion = min_diffusion.min(m);
    }
    let min_offdiag = if s.n > 1 { s.l.min_matrix().min_offdiag() } else { f64::INFINITY };
    if min_offdiag < -OFFDIAG_TOL {
        return Err(Error::Cooperativity(format!("off-diagonal coupling sample {min_offdiag:e} is negative")));
    }
    Ok(ValidationReport {
        min_diffusion,
        min_offdiag: if s.n > 1 { min_offdiag } else { 0.0 },
        irreducible: s.is_irreducible(),
        flagged_reducible: s.reducible,
        time_independent: s.is_time_independent(),
        x_independent: s.is_x_independent(),
    })
}

/// Strongly connected components of the max-matrix graph (edge j → i when
/// some sample of `l_ij` is positive), ordered so that the permuted
/// max-matrix is block upper triangular.
pub fn block_decompose(s: &System) -> BlockStructure {
    let lbar = s.max_matrix();
    let comps = strongly_connected_components(s.n, |i, j| lbar[(i, j)] > OFFDIAG_TOL);
    let mut permutation = Vec::with_capacity(s.n);
    let mut block_bounds = vec![0];
    for c in comps {
        permutation.extend(c);
        block_bounds.push(permutation.len());
    }
    BlockStructure { permutation, block_bounds }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(nt: usize, nx: usize) -> PeriodicCell {
        PeriodicCell::new(1.0, 1.0, nt, nx).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let c = cell(4, 4);
        let f = sample(&CoefficientDescriptor::constant(3.5), &c).unwrap();
        assert!(f.data.iter().all(|v| *v == 3.5));
        let four = CoefficientDescriptor::Fourier {
            terms: vec![FourierTerm { k: 0, m: 1, t: Trig::Cos, x: Trig::Cos, amplitude: 2.0 }],
            floor: None,
        };
        assert_eq!(sample(&four, &c).unwrap().at(2, 0), 2.0);
        let pw = CoefficientDescriptor::Piecewise {
            pieces: vec![Piece { t: None, x: Some([0.0, 0.5]), value: 1.0 }, Piece { t: None, x: Some([0.5, 1.0]), value: 0.0 }],
            default: 0.0,
            smooth: 0,
        };
        assert_eq!(sample(&pw, &c).unwrap().time_row(0), &[1.0, 1.0, 0.0, 0.0]);
        let grid = CoefficientDescriptor::Grid { values: vec![vec![1.0; 3]; 4] };
        assert_eq!(sample(&grid, &c).unwrap_err().code(), "SCHEMA_ERROR");
    }

    #[test]
    fn validation_examples() {
        let c = cell(4, 8);
        let lap = SquareMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let s = System::constant(c, &[1.0, 1.0], &[1.0, 1.0], &lap.shifted(0.125));
        let r = s.validate().unwrap();
        assert!(r.irreducible);
        let bad = System::constant(c, &[0.0], &[0.0], &SquareMatrix::zeros(1));
        assert_eq!(bad.validate().unwrap_err().code(), "ELLIPTICITY_VIOLATION");
        let scalar = System::constant(c, &[1.0], &[0.0], &SquareMatrix::zeros(1));
        assert!(scalar.validate().unwrap().irreducible);
        let neg = System::constant(c, &[1.0, 1.0], &[0.0, 0.0], &SquareMatrix::from_rows(&[vec![0.0, -0.5], vec![1.0, 0.0]]).unwrap());
        assert_eq!(neg.validate().unwrap_err().code(), "COOPERATIVITY_VIOLATION");
    }

    #[test]
    fn block_examples() {
        let c = cell(4, 4);
        let full = System::constant(c, &[1.0, 1.0], &[0.0, 0.0], &SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        assert_eq!(block_decompose(&full).block_bounds, vec![0, 2]);
        let diag = System::constant(c, &[1.0, 1.0], &[0.0, 2.0], &SquareMatrix::diagonal(&[0.0, 1.0]));
        let b = block_decompose(&diag);
        assert_eq!(b.count(), 2);
        assert_eq!(b.blocks(), vec![vec![0], vec![1]]);
    }

    #[test]
    fn frozen_and_averaged_views() {
        let c = cell(4, 4);
        let mut s = System::constant(c, &[1.0], &[0.0], &SquareMatrix::zeros(1));
        s.l = MatrixField::from_fn(1, 4, 4, |j, k| SquareMatrix::diagonal(&[(j * 4 + k) as f64]));
        assert!(!s.is_time_independent() && !s.is_x_independent());
        assert_eq!(s.frozen_x(2).l.entry_field(0, 0).data, vec![2.0, 6.0, 10.0, 14.0]);
        assert_eq!(s.frozen_t(1).l.entry_field(0, 0).time_row(3), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(s.space_averaged().l.entry_field(0, 0).data, vec![1.5, 5.5, 9.5, 13.5]);
        assert!(s.time_averaged().is_time_independent());
    }
}
