//! Small dense matrices, sampled fields and Perron–Frobenius routines for
//! essentially nonnegative matrices.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 64;
/// Off-diagonal entries above `-OFFDIAG_TOL` count as nonnegative.
pub const OFFDIAG_TOL: f64 = 1e-12;
const LINE_SUM_TOL: f64 = 1e-10;
const PF_DRIFT_TOL: f64 = 1e-12;
const PF_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > MAX_ORDER {
            return Err(Error::ShapeMismatch(format!("matrix order {n} outside 1..={MAX_ORDER}")));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::ShapeMismatch(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            data.extend_from_slice(r);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("matrix entries must be finite".into()));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data length");
        SquareMatrix { n, data }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        SquareMatrix { n: self.n, data }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SquareMatrix { n: self.n, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            m[(i, i)] += c;
        }
        m
    }

    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut m = self.clone();
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|i| (0..n).map(|j| self.data[i * n + j] * x[j]).sum()).collect()
    }

    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|j| (0..n).map(|i| self.data[i * n + j] * x[i]).sum()).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| (0..self.n).map(|i| self[(i, j)]).sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_offdiag(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    m = m.min(self[(i, j)]);
                }
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |a, b| self[(idx[a], idx[b])])
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl Serialize for SquareMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SquareMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SquareMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// LU factorization without pivoting. Every system solved in this crate is a
/// nonsingular M-matrix or symmetric positive definite, for which the
/// unpivoted factorization exists and preserves sign structure.
#[derive(Clone, Debug)]
pub(crate) struct DenseLu {
    n: usize,
    lu: Vec<f64>,
}

impl DenseLu {
    pub(crate) fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        for k in 0..n {
            let p = a[k * n + k];
            if !p.is_finite() || p.abs() < 1e-300 {
                return Err(Error::SingularStep(format!("zero pivot {p:e} at position {k}")));
            }
            for i in k + 1..n {
                let f = a[i * n + k] / p;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Ok(DenseLu { n, lu: a })
    }

    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }
}

/// Strongly connected components of the graph with an edge `j -> i` whenever
/// `edge(i, j)` holds (i ≠ j). Components are returned so that edges only run
/// from later components to earlier ones, i.e. the permuted matrix is block
/// upper triangular. Indices inside a component are ascending.
pub fn strongly_connected_components(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    // Tarjan; components come out after everything they reach.
    struct St<'a> {
        succ: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    fn visit(s: &mut St, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on[v] = true;
        for k in 0..s.succ[v].len() {
            let w = s.succ[v][k];
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = s.stack.pop().expect("tarjan stack");
                s.on[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            s.out.push(comp);
        }
    }
    let succ: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| i != j && edge(i, j)).collect()).collect();
    let mut s = St {
        succ: &succ,
        index: vec![None; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.out
}

pub fn is_irreducible(m: &SquareMatrix) -> bool {
    m.order() <= 1 || strongly_connected_components(m.order(), |i, j| m[(i, j)] > 0.0).len() == 1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfResult {
    pub value: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub residual: f64,
    pub simple: bool,
    pub iterations: usize,
}

fn check_ess_nonneg(m: &SquareMatrix) -> Result<()> {
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NotEssentiallyNonnegative("non-finite entry".into()));
    }
    let mo = m.min_offdiag();
    if mo < -OFFDIAG_TOL {
        return Err(Error::NotEssentiallyNonnegative(format!("off-diagonal entry {mo:e}")));
    }
    Ok(())
}

fn clean_offdiag(m: &SquareMatrix) -> SquareMatrix {
    SquareMatrix::from_fn(m.order(), |i, j| if i != j { m[(i, j)].max(0.0) } else { m[(i, j)] })
}

fn unit_sum(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

fn normalize_max(m: &mut SquareMatrix) {
    let mx = m.max_abs();
    if mx > 0.0 {
        m.data.iter_mut().for_each(|v| *v /= mx);
    }
}

/// Right and left dominant vectors of a nonnegative matrix with positive
/// diagonal, via repeated squaring: `B^(2^k)` tends to a rank-one matrix
/// whose column and row spaces are the Perron vectors.
fn squaring_vectors(b: &SquareMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = b.order();
    let ones = vec![1.0; n];
    let mut p = b.clone();
    normalize_max(&mut p);
    let mut x = unit_sum(p.mul_vec(&ones));
    let mut y = unit_sum(p.tmul_vec(&ones));
    for _ in 0..64 {
        p = p.matmul(&p);
        normalize_max(&mut p);
        let xn = unit_sum(p.mul_vec(&ones));
        let yn = unit_sum(p.tmul_vec(&ones));
        let dx = xn.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let dy = yn.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = xn;
        y = yn;
        if dx < 1e-16 && dy < 1e-16 {
            break;
        }
    }
    (x, y)
}

/// Plain power iteration on `b` (nonnegative) from `x`, stopping when the
/// Rayleigh estimate drifts by less than the tolerance for 10 iterations.
fn polish(b: &SquareMatrix, mut x: Vec<f64>, transpose: bool) -> Result<(Vec<f64>, usize)> {
    let mut prev = f64::NAN;
    let mut calm = 0;
    for it in 1..=PF_MAX_ITER {
        let bx = if transpose { b.tmul_vec(&x) } else { b.mul_vec(&x) };
        let s: f64 = bx.iter().sum();
        let rho = s / x.iter().sum::<f64>();
        x = unit_sum(bx);
        if (rho - prev).abs() <= PF_DRIFT_TOL * rho.abs().max(1e-300) {
            calm += 1;
            if calm >= 10 {
                return Ok((x, it));
            }
        } else {
            calm = 0;
        }
        prev = rho;
        if s == 0.0 {
            return Ok((x, it));
        }
    }
    Err(Error::NoConvergence(format!("power iteration did not settle in {PF_MAX_ITER} iterations")))
}

fn perron_irreducible(m: &SquareMatrix) -> Result<PfResult> {
    let n = m.order();
    if n == 1 {
        return Ok(PfResult { value: m[(0, 0)], right: vec![1.0], left: vec![1.0], residual: 0.0, simple: true, iterations: 0 });
    }
    let c = 1.0 + (0..n).fold(0.0f64, |a, i| a.max(m[(i, i)].abs()));
    let b = m.shifted(c);
    let (x0, y0) = squaring_vectors(&b);
    let (x, itx) = polish(&b, x0, false)?;
    let (y, ity) = polish(&b, y0, true)?;
    let mx = m.mul_vec(&x);
    let den: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
    let value = y.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>() / den;
    let residual = mx.iter().zip(&x).fold(0.0f64, |r, (a, b)| r.max((a - value * b).abs()));
    Ok(PfResult { value, right: x, left: y, residual, simple: true, iterations: itx + ity })
}

/// Dominant eigenpair of an essentially nonnegative matrix. Reducible input
/// yields the maximum over the irreducible diagonal blocks.
pub fn perron(m: &SquareMatrix) -> Result<PfResult> {
    check_ess_nonneg(m)?;
    let m = clean_offdiag(m);
    let n = m.order();
    let blocks = strongly_connected_components(n, |i, j| m[(i, j)] > 0.0);
    if blocks.len() == 1 {
        return perron_irreducible(&m);
    }
    let mut values = Vec::with_capacity(blocks.len());
    let mut iterations = 0;
    for blk in &blocks {
        let r = perron_irreducible(&m.submatrix(blk))?;
        iterations += r.iterations;
        values.push(r.value);
    }
    let value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|v| (value - **v).abs() <= 1e-12 * (1.0 + value.abs())).count();
    let c = 1.0 + (0..n).fold(0.0f64, |a, i| a.max(m[(i, i)].abs()));
    let (x, y) = squaring_vectors(&m.shifted(c));
    let mx = m.mul_vec(&x);
    let residual = mx.iter().zip(&x).fold(0.0f64, |r, (a, b)| r.max((a - value * b).abs()));
    Ok(PfResult { value, right: x, left: y, residual, simple: ties == 1, iterations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StructureFlags {
    pub ess_nonneg: bool,
    pub irreducible: bool,
    pub line_sum_symmetric: bool,
    pub doubly_stochastic: bool,
}

pub fn structure_flags(m: &SquareMatrix) -> StructureFlags {
    let n = m.order();
    let ess_nonneg = m.min_offdiag() >= -OFFDIAG_TOL || n == 1;
    let rs = m.row_sums();
    let cs = m.col_sums();
    let line_sum_symmetric = rs.iter().zip(&cs).all(|(a, b)| (a - b).abs() <= LINE_SUM_TOL);
    let doubly_stochastic = m.as_slice().iter().all(|v| *v >= -OFFDIAG_TOL)
        && rs.iter().chain(&cs).all(|s| (s - 1.0).abs() <= LINE_SUM_TOL);
    StructureFlags { ess_nonneg, irreducible: is_irreducible(m), line_sum_symmetric, doubly_stochastic }
}

/// Real samples on the `nt × nx` grid of a periodicity cell, time-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub nt: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn constant(nt: usize, nx: usize, v: f64) -> Self {
        ScalarField { nt, nx, data: vec![v; nt * nx] }
    }

    pub fn from_fn(nt: usize, nx: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nt * nx);
        for j in 0..nt {
            for k in 0..nx {
                data.push(f(j, k));
            }
        }
        ScalarField { nt, nx, data }
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.nx + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[j * self.nx + k] = v;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn time_row(&self, j: usize) -> &[f64] {
        &self.data[j * self.nx..(j + 1) * self.nx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { nt: self.nt, nx: self.nx, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn is_time_independent(&self) -> bool {
        (1..self.nt).all(|j| self.time_row(j) == self.time_row(0))
    }

    pub fn is_x_independent(&self) -> bool {
        (0..self.nt).all(|j| self.time_row(j).iter().all(|v| *v == self.at(j, 0)))
    }
}

/// Grid-sampled `N × N` matrix field `L(t, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixField {
    pub n: usize,
    pub nt: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl MatrixField {
    pub fn zeros(n: usize, nt: usize, nx: usize) -> Self {
        MatrixField { n, nt, nx, data: vec![0.0; n * n * nt * nx] }
    }

    pub fn constant(m: &SquareMatrix, nt: usize, nx: usize) -> Self {
        Self::from_fn(m.order(), nt, nx, |_, _| m.clone())
    }

    pub fn from_fn(n: usize, nt: usize, nx: usize, mut f: impl FnMut(usize, usize) -> SquareMatrix) -> Self {
        let mut data = Vec::with_capacity(n * n * nt * nx);
        for j in 0..nt {
            for k in 0..nx {
                let m = f(j, k);
                assert_eq!(m.order(), n, "matrix field entry order");
                data.extend_from_slice(m.as_slice());
            }
        }
        MatrixField { n, nt, nx, data }
    }

    /// Builds a field entrywise from scalar fields (`entries[r][c]`).
    pub fn from_entries(entries: &[Vec<ScalarField>]) -> Self {
        let n = entries.len();
        let (nt, nx) = (entries[0][0].nt, entries[0][0].nx);
        Self::from_fn(n, nt, nx, |j, k| SquareMatrix::from_fn(n, |r, c| entries[r][c].at(j, k)))
    }

    #[inline]
    pub fn block(&self, j: usize, k: usize) -> &[f64] {
        let nn = self.n * self.n;
        let o = (j * self.nx + k) * nn;
        &self.data[o..o + nn]
    }

    pub fn at(&self, j: usize, k: usize) -> SquareMatrix {
        SquareMatrix::from_row_major(self.n, self.block(j, k).to_vec())
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize, j: usize, k: usize) -> f64 {
        self.data[((j * self.nx + k) * self.n + r) * self.n + c]
    }

    pub fn set_entry(&mut self, r: usize, c: usize, j: usize, k: usize, v: f64) {
        self.data[((j * self.nx + k) * self.n + r) * self.n + c] = v;
    }

    pub fn entry_field(&self, r: usize, c: usize) -> ScalarField {
        ScalarField::from_fn(self.nt, self.nx, |j, k| self.entry(r, c, j, k))
    }

    pub fn samples(&self) -> impl Iterator<Item = SquareMatrix> + '_ {
        (0..self.nt).flat_map(move |j| (0..self.nx).map(move |k| self.at(j, k)))
    }

    pub fn max_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.n, |r, c| self.entry_field(r, c).max())
    }

    pub fn min_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.n, |r, c| self.entry_field(r, c).min())
    }

    pub fn map(&self, mut f: impl FnMut(usize, usize, SquareMatrix) -> SquareMatrix) -> Self {
        Self::from_fn(self.n, self.nt, self.nx, |j, k| f(j, k, self.at(j, k)))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.nt, self.nx), (other.n, other.nt, other.nx));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        MatrixField { n: self.n, nt: self.nt, nx: self.nx, data }
    }

    pub fn scaled(&self, c: f64) -> Self {
        MatrixField { n: self.n, nt: self.nt, nx: self.nx, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn is_time_independent(&self) -> bool {
        let row = self.nx * self.n * self.n;
        (1..self.nt).all(|j| self.data[j * row..(j + 1) * row] == self.data[..row])
    }

    pub fn is_x_independent(&self) -> bool {
        (0..self.nt).all(|j| (1..self.nx).all(|k| self.block(j, k) == self.block(j, 0)))
    }

    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.nt, self.nx, |j, k| self.at(j, k).submatrix(idx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AveragedMatrices {
    /// `L̂(x)`, one matrix per space node.
    pub time_mean: Vec<SquareMatrix>,
    /// `⟨L⟩(t)`, one matrix per time node.
    pub space_mean: Vec<SquareMatrix>,
    pub spacetime_mean: SquareMatrix,
    /// `L^#(t)`, one matrix per time node.
    pub geo_space: Vec<SquareMatrix>,
    /// `L^♭(x)`, one matrix per space node.
    pub geo_time: Vec<SquareMatrix>,
}

pub fn averaged_matrices(f: &MatrixField) -> AveragedMatrices {
    let (n, nt, nx) = (f.n, f.nt, f.nx);
    let min = f.min_matrix();
    let arith = |r: usize, c: usize, pts: &mut dyn Iterator<Item = (usize, usize)>| {
        let (s, cnt) = pts.fold((0.0, 0usize), |(s, cnt), (j, k)| (s + f.entry(r, c, j, k), cnt + 1));
        s / cnt as f64
    };
    let geo = |r: usize, c: usize, pts: &mut dyn Iterator<Item = (usize, usize)>| {
        if r == c {
            let (s, cnt) = pts.fold((0.0, 0usize), |(s, cnt), (j, k)| (s + f.entry(r, c, j, k), cnt + 1));
            s / cnt as f64
        } else if min[(r, c)] > 0.0 {
            let (s, cnt) = pts.fold((0.0, 0usize), |(s, cnt), (j, k)| (s + f.entry(r, c, j, k).ln(), cnt + 1));
            (s / cnt as f64).exp()
        } else {
            0.0
        }
    };
    let time_mean = (0..nx)
        .map(|k| SquareMatrix::from_fn(n, |r, c| arith(r, c, &mut (0..nt).map(|j| (j, k)))))
        .collect();
    let space_mean = (0..nt)
        .map(|j| SquareMatrix::from_fn(n, |r, c| arith(r, c, &mut (0..nx).map(|k| (j, k)))))
        .collect();
    let spacetime_mean =
        SquareMatrix::from_fn(n, |r, c| arith(r, c, &mut (0..nt).flat_map(|j| (0..nx).map(move |k| (j, k)))));
    let geo_space = (0..nt)
        .map(|j| SquareMatrix::from_fn(n, |r, c| geo(r, c, &mut (0..nx).map(|k| (j, k)))))
        .collect();
    let geo_time = (0..nx)
        .map(|k| SquareMatrix::from_fn(n, |r, c| geo(r, c, &mut (0..nt).map(|j| (j, k)))))
        .collect();
    AveragedMatrices { time_mean, space_mean, spacetime_mean, geo_space, geo_time }
}

/// `L = diag(r) + (S − I) diag(μ)` on the sample grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationDecomposition {
    pub r: Vec<ScalarField>,
    pub mu: Vec<ScalarField>,
    pub s: MatrixField,
}

impl MutationDecomposition {
    pub fn coupling(&self) -> MatrixField {
        let n = self.s.n;
        self.s.map(|j, k, s| {
            SquareMatrix::from_fn(n, |r, c| {
                let mu = self.mu[c].at(j, k);
                if r == c {
                    self.r[r].at(j, k) + (s[(r, c)] - 1.0) * mu
                } else {
                    s[(r, c)] * mu
                }
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub valid: bool,
    pub deviation: f64,
}

pub fn check_decomposition(dec: &MutationDecomposition, l: &MatrixField) -> Result<DecompositionCheck> {
    let (n, nt, nx) = (l.n, l.nt, l.nx);
    let shape_ok = dec.r.len() == n
        && dec.mu.len() == n
        && (dec.s.n, dec.s.nt, dec.s.nx) == (n, nt, nx)
        && dec.r.iter().chain(&dec.mu).all(|f| (f.nt, f.nx) == (nt, nx));
    if !shape_ok {
        return Err(Error::ShapeMismatch("decomposition and coupling field shapes differ".into()));
    }
    let recon = dec.coupling();
    let mut dev = 0.0f64;
    for j in 0..nt {
        for k in 0..nx {
            let s = dec.s.at(j, k);
            for v in s.as_slice() {
                dev = dev.max(-v);
            }
            for x in s.row_sums().iter().chain(&s.col_sums()) {
                dev = dev.max((x - 1.0).abs());
            }
            for mu in &dec.mu {
                dev = dev.max(-mu.at(j, k));
            }
            for (a, b) in recon.block(j, k).iter().zip(l.block(j, k)) {
                dev = dev.max((a - b).abs());
            }
        }
    }
    Ok(DecompositionCheck { valid: dev <= 1e-10, deviation: dev })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn discrete_laplacian(n: usize) -> SquareMatrix {
        SquareMatrix::from_fn(n, |i, j| {
            if i == j {
                if i == 0 || i == n - 1 { -1.0 } else { -2.0 }
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn exchange_matrix() {
        let r = perron(&m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((r.value - 1.0).abs() < 1e-13);
        assert!((r.right[0] - 0.5).abs() < 1e-13 && (r.right[1] - 0.5).abs() < 1e-13);
        assert!(r.simple);
    }

    #[test]
    fn rayleigh_gap_matrix() {
        let r = perron(&m(&[&[1.0, 1.0], &[0.25, 1.0]])).unwrap();
        assert!((r.value - 1.5).abs() < 1e-12);
        // left vector ∝ (√ε, 1) with ε = 1/4
        assert!((r.left[0] / r.left[1] - 0.5).abs() < 1e-10);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn neumann_laplacian_has_zero_pf() {
        for n in [2, 3, 7] {
            let r = perron(&discrete_laplacian(n)).unwrap();
            assert!(r.value.abs() < 1e-12, "n={n} value={}", r.value);
            for v in &r.right {
                assert!((v - 1.0 / n as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reducible_takes_block_max() {
        let r = perron(&m(&[&[0.0, 0.3], &[0.0, 1.0]])).unwrap();
        assert!((r.value - 1.0).abs() < 1e-13);
        assert!(r.simple);
        let r = perron(&SquareMatrix::identity(3)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-13);
        assert!(!r.simple);
    }

    #[test]
    fn rejects_negative_offdiag() {
        let e = perron(&m(&[&[0.0, -1.0], &[1.0, 0.0]])).unwrap_err();
        assert_eq!(e.code(), "NOT_ESSENTIALLY_NONNEGATIVE");
    }

    #[test]
    fn flags() {
        let f = structure_flags(&SquareMatrix::identity(3));
        assert_eq!(f, StructureFlags { ess_nonneg: true, irreducible: false, line_sum_symmetric: true, doubly_stochastic: true });
        let circ = m(&[&[0.0, 1.0, 2.0], &[2.0, 0.0, 1.0], &[1.0, 2.0, 0.0]]);
        assert!(structure_flags(&circ).line_sum_symmetric);
        assert!(!structure_flags(&m(&[&[1.0, 1.0], &[0.25, 1.0]])).line_sum_symmetric);
        assert!(structure_flags(&SquareMatrix::zeros(1)).irreducible);
    }

    #[test]
    fn scc_order_is_block_upper_triangular() {
        // 0 feeds 1 (l_10 > 0), 1 and 2 feed each other.
        let a = m(&[&[1.0, 0.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let comps = strongly_connected_components(3, |i, j| a[(i, j)] > 0.0);
        assert_eq!(comps, vec![vec![1, 2], vec![0]]);
    }

    #[test]
    fn averages_of_two_phase_field() {
        let l1 = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let l2 = m(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let f = MatrixField::from_fn(2, 4, 8, |_, k| if k < 4 { l1.clone() } else { l2.clone() });
        let av = averaged_matrices(&f);
        assert_eq!(av.spacetime_mean, m(&[&[1.0, 0.5], &[0.5, 1.0]]));
        assert!((perron(&av.spacetime_mean).unwrap().value - 1.5).abs() < 1e-12);
        for s in f.samples() {
            assert!((perron(&s).unwrap().value - 1.0).abs() < 1e-12);
        }
        // zero minimum off-diagonal: geometric mean is 0
        assert_eq!(av.geo_space[0][(0, 1)], 0.0);
    }

    #[test]
    fn geometric_versus_arithmetic() {
        let f = MatrixField::from_fn(2, 4, 4, |_, k| m(&[&[0.0, if k < 2 { 1.0 } else { 4.0 }], &[1.0, 0.0]]));
        let av = averaged_matrices(&f);
        assert!((av.geo_space[0][(0, 1)] - 2.0).abs() < 1e-14);
        assert!((av.space_mean[0][(0, 1)] - 2.5).abs() < 1e-14);
        let c = MatrixField::constant(&m(&[&[-1.0, 2.0], &[3.0, 0.5]]), 4, 4);
        let av = averaged_matrices(&c);
        for x in av.time_mean.iter().chain(&av.space_mean).chain(&av.geo_space).chain(&av.geo_time) {
            assert!(x.add(&c.at(0, 0).scaled(-1.0)).max_abs() < 1e-14);
        }
    }

    #[test]
    fn decomposition_checks() {
        let (nt, nx) = (4, 4);
        let zero = || ScalarField::constant(nt, nx, 0.0);
        let one = || ScalarField::constant(nt, nx, 1.0);
        let r = vec![ScalarField::constant(nt, nx, 0.7), ScalarField::constant(nt, nx, -0.2)];
        let dec = MutationDecomposition { r: r.clone(), mu: vec![zero(), zero()], s: MatrixField::constant(&SquareMatrix::identity(2), nt, nx) };
        let l = MatrixField::constant(&SquareMatrix::diagonal(&[0.7, -0.2]), nt, nx);
        let c = check_decomposition(&dec, &l).unwrap();
        assert!(c.valid && c.deviation == 0.0);

        let ex = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let dec = MutationDecomposition { r: vec![zero(), zero()], mu: vec![one(), one()], s: MatrixField::constant(&ex, nt, nx) };
        let l = MatrixField::constant(&m(&[&[-1.0, 1.0], &[1.0, -1.0]]), nt, nx);
        assert!(check_decomposition(&dec, &l).unwrap().valid);

        let bad = m(&[&[1.1, 0.0], &[0.0, 1.0]]);
        let dec = MutationDecomposition { r: vec![zero(), zero()], mu: vec![zero(), zero()], s: MatrixField::constant(&bad, nt, nx) };
        let c = check_decomposition(&dec, &MatrixField::zeros(2, nt, nx)).unwrap();
        assert!(!c.valid);
        assert!((c.deviation - 0.1).abs() < 1e-12);

        let e = check_decomposition(&dec, &MatrixField::zeros(3, nt, nx)).unwrap_err();
        assert_eq!(e.code(), "SHAPE_MISMATCH");
    }

    #[test]
    fn dense_lu_solves() {
        let a = vec![4.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 4.0];
        let lu = DenseLu::factor(3, a.clone()).unwrap();
        let mut b = vec![1.0, 2.0, 3.0];
        lu.solve_in_place(&mut b);
        let back = SquareMatrix::from_row_major(3, a).mul_vec(&b);
        for (x, y) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
