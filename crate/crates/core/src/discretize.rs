//! Finite-difference assembly of the tilted spatial operator and the
//! one-period evolution (monodromy) map.
//!
//! Internally states are stored node-major (`node * N + species`) so that the
//! operator is block tridiagonal with `N × N` blocks, cyclic under periodic
//! boundary conditions.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrixkit::DenseLu;
use crate::model::System;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Boundary {
    Periodic,
    /// Zero values outside `[-R, R]`.
    Dirichlet { half_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateVector {
    pub species: usize,
    pub nodes: usize,
    /// Species-major: `values[i * nodes + k]`.
    pub values: Vec<f64>,
}

impl StateVector {
    pub fn filled(species: usize, nodes: usize, v: f64) -> Self {
        StateVector { species, nodes, values: vec![v; species * nodes] }
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.nodes + k]
    }

    pub(crate) fn from_node_major(species: usize, nodes: usize, x: &[f64]) -> Self {
        let mut values = vec![0.0; species * nodes];
        for k in 0..nodes {
            for i in 0..species {
                values[i * nodes + k] = x[k * species + i];
            }
        }
        StateVector { species, nodes, values }
    }

    pub(crate) fn to_node_major(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.values.len()];
        for i in 0..self.species {
            for k in 0..self.nodes {
                x[k * self.species + i] = self.values[i * self.nodes + k];
            }
        }
        x
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Grid nodes on which the operator acts and the sample column feeding each.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub nodes: usize,
    pub periodic: bool,
    pub cols: Vec<usize>,
}

impl Layout {
    pub(crate) fn new(sys: &System, boundary: Boundary) -> Result<Self> {
        let nx = sys.cell.nx;
        match boundary {
            Boundary::Periodic => Ok(Layout { nodes: nx, periodic: nx > 1, cols: (0..nx).collect() }),
            Boundary::Dirichlet { half_width } => {
                if sys.cell.ode_mode() {
                    return Err(Error::Schema("Dirichlet problems need a spatial grid (nx > 1)".into()));
                }
                if !(half_width >= sys.cell.period_l * (1.0 - 1e-12)) {
                    return Err(Error::Schema(format!("half width {half_width} is shorter than one period")));
                }
                let h = sys.cell.h();
                let r_nodes = (half_width / h).round() as i64;
                let nodes = (2 * r_nodes - 1) as usize;
                let cols = (1..=2 * r_nodes - 1).map(|j| (j - r_nodes).rem_euclid(nx as i64) as usize).collect();
                Ok(Layout { nodes, periodic: false, cols })
            }
        }
    }
}

/// Block tridiagonal operator; `lower`/`upper` hold the diagonal of the
/// off-diagonal blocks (the stencil couples a species only to itself).
#[derive(Clone, Debug)]
pub(crate) struct BlockTri {
    pub nb: usize,
    pub n: usize,
    pub periodic: bool,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub diag: Vec<f64>,
}

impl BlockTri {
    pub(crate) fn dim(&self) -> usize {
        self.nb * self.n
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (nb, n) = (self.nb, self.n);
        let mut y = vec![0.0; nb * n];
        for p in 0..nb {
            let d = &self.diag[p * n * n..(p + 1) * n * n];
            for r in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += d[r * n + c] * x[p * n + c];
                }
                y[p * n + r] = s;
            }
            if nb > 1 {
                let prev = if p > 0 { Some(p - 1) } else if self.periodic { Some(nb - 1) } else { None };
                let next = if p + 1 < nb { Some(p + 1) } else if self.periodic { Some(0) } else { None };
                for r in 0..n {
                    if let Some(q) = prev {
                        y[p * n + r] += self.lower[p * n + r] * x[q * n + r];
                    }
                    if let Some(q) = next {
                        y[p * n + r] += self.upper[p * n + r] * x[q * n + r];
                    }
                }
            }
        }
        y
    }

    pub(crate) fn transpose(&self) -> BlockTri {
        let (nb, n) = (self.nb, self.n);
        let mut lower = vec![0.0; nb * n];
        let mut upper = vec![0.0; nb * n];
        let mut diag = vec![0.0; nb * n * n];
        for p in 0..nb {
            for r in 0..n {
                for c in 0..n {
                    diag[p * n * n + r * n + c] = self.diag[p * n * n + c * n + r];
                }
            }
            if nb > 1 {
                // (Aᵀ)_{p,p-1} = A_{p-1,p} = upper[p-1]; (Aᵀ)_{p,p+1} = A_{p+1,p} = lower[p+1]
                let prev = if p > 0 { Some(p - 1) } else if self.periodic { Some(nb - 1) } else { None };
                let next = if p + 1 < nb { Some(p + 1) } else if self.periodic { Some(0) } else { None };
                for r in 0..n {
                    if let Some(q) = prev {
                        lower[p * n + r] = self.upper[q * n + r];
                    }
                    if let Some(q) = next {
                        upper[p * n + r] = self.lower[q * n + r];
                    }
                }
            }
        }
        BlockTri { nb, n, periodic: self.periodic, lower, upper, diag }
    }

    pub(crate) fn max_row_sum(&self) -> f64 {
        let n = self.n;
        let mut m = f64::NEG_INFINITY;
        for p in 0..self.nb {
            for r in 0..n {
                let mut s: f64 = self.diag[p * n * n + r * n..p * n * n + (r + 1) * n].iter().sum();
                if self.nb > 1 {
                    s += self.lower[p * n + r] + self.upper[p * n + r];
                }
                m = m.max(s);
            }
        }
        m
    }

    /// Gershgorin-type bound: every eigenvalue has real part below this.
    pub(crate) fn abscissa_bound(&self) -> f64 {
        let n = self.n;
        let mut m = f64::NEG_INFINITY;
        for p in 0..self.nb {
            for r in 0..n {
                let row = &self.diag[p * n * n + r * n..p * n * n + (r + 1) * n];
                let mut s = row[r];
                for (c, v) in row.iter().enumerate() {
                    if c != r {
                        s += v.abs();
                    }
                }
                if self.nb > 1 {
                    s += self.lower[p * n + r].abs() + self.upper[p * n + r].abs();
                }
                m = m.max(s);
            }
        }
        m
    }

    /// Factorizes `alpha·I − beta·A`.
    pub(crate) fn factor(&self, alpha: f64, beta: f64) -> Result<BlockLu> {
        BlockLu::new(self, alpha, beta)
    }
}

/// Block LU of `alpha·I − beta·A`. For the cyclic case the last block is
/// eliminated through a Schur complement (bordered block Thomas).
#[derive(Clone, Debug)]
pub(crate) struct BlockLu {
    n: usize,
    m: usize,
    periodic: bool,
    g: Vec<DenseLu>,
    w: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    z: Vec<f64>,
    schur: Option<DenseLu>,
}

impl BlockLu {
    fn new(a: &BlockTri, alpha: f64, beta: f64) -> Result<Self> {
        let (nb, n) = (a.nb, a.n);
        let nn = n * n;
        let periodic = a.periodic && nb >= 3;
        let m = if periodic { nb - 1 } else { nb };
        let dblock = |p: usize| -> Vec<f64> {
            let mut d: Vec<f64> = a.diag[p * nn..(p + 1) * nn].iter().map(|v| -beta * v).collect();
            for i in 0..n {
                d[i * n + i] += alpha;
            }
            d
        };
        let b: Vec<f64> = a.lower.iter().map(|v| -beta * v).collect();
        let c: Vec<f64> = a.upper.iter().map(|v| -beta * v).collect();
        let mut g = Vec::with_capacity(m);
        let mut w = vec![0.0; m * nn];
        for p in 0..m {
            let mut d = dblock(p);
            if p > 0 {
                for r in 0..n {
                    for col in 0..n {
                        d[r * n + col] -= b[p * n + r] * w[(p - 1) * nn + r * n + col];
                    }
                }
            }
            let lu = DenseLu::factor(n, d)?;
            if p + 1 < m {
                let mut e = vec![0.0; n];
                for col in 0..n {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[col] = c[p * n + col];
                    lu.solve_in_place(&mut e);
                    for r in 0..n {
                        w[p * nn + r * n + col] = e[r];
                    }
                }
            }
            g.push(lu);
        }
        let mut me = BlockLu { n, m, periodic, g, w, b, c, z: Vec::new(), schur: None };
        if periodic {
            let mut z = vec![0.0; m * nn];
            let mut rhs = vec![0.0; m * n];
            for col in 0..n {
                rhs.iter_mut().for_each(|v| *v = 0.0);
                rhs[col] += me.b[col];
                rhs[(m - 1) * n + col] += me.c[(m - 1) * n + col];
                me.thomas(&mut rhs);
                for p in 0..m {
                    for r in 0..n {
                        z[p * nn + r * n + col] = rhs[p * n + r];
                    }
                }
            }
            let last = nb - 1;
            let mut s = dblock(last);
            for r in 0..n {
                for col in 0..n {
                    s[r * n + col] -= me.b[last * n + r] * z[(m - 1) * nn + r * n + col] + me.c[last * n + r] * z[r * n + col];
                }
            }
            me.schur = Some(DenseLu::factor(n, s)?);
            me.z = z;
        }
        Ok(me)
    }

    fn thomas(&self, f: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let nn = n * n;
        for p in 0..m {
            if p > 0 {
                for r in 0..n {
                    f[p * n + r] -= self.b[p * n + r] * f[(p - 1) * n + r];
                }
            }
            self.g[p].solve_in_place(&mut f[p * n..(p + 1) * n]);
        }
        for p in (0..m.saturating_sub(1)).rev() {
            let (head, tail) = f.split_at_mut((p + 1) * n);
            let next = &tail[..n];
            let w = &self.w[p * nn..(p + 1) * nn];
            for r in 0..n {
                let mut s = 0.0;
                for col in 0..n {
                    s += w[r * n + col] * next[col];
                }
                head[p * n + r] -= s;
            }
        }
    }

    pub(crate) fn solve_in_place(&self, f: &mut [f64]) {
        if !self.periodic {
            self.thomas(f);
            return;
        }
        let (n, m) = (self.n, self.m);
        let nn = n * n;
        let (int, last) = f.split_at_mut(m * n);
        self.thomas(int);
        for r in 0..n {
            last[r] -= self.b[m * n + r] * int[(m - 1) * n + r] + self.c[m * n + r] * int[r];
        }
        self.schur.as_ref().expect("schur factor").solve_in_place(last);
        for p in 0..m {
            let z = &self.z[p * nn..(p + 1) * nn];
            for r in 0..n {
                let mut s = 0.0;
                for col in 0..n {
                    s += z[r * n + col] * last[col];
                }
                int[p * n + r] -= s;
            }
        }
    }
}

/// Coefficients at one instant, linearly interpolated between time nodes.
struct Slice {
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    l: Vec<f64>,
}

fn interp_weights(sys: &System, t: f64) -> (usize, usize, f64) {
    let nt = sys.cell.nt;
    let s = (t / sys.cell.period_t * nt as f64).rem_euclid(nt as f64);
    let j0 = (s.floor() as usize).min(nt - 1);
    let w = s - j0 as f64;
    (j0, (j0 + 1) % nt, w)
}

fn slice_at(sys: &System, t: Option<f64>) -> Slice {
    let nx = sys.cell.nx;
    let (j0, j1, w) = match t {
        Some(t) => interp_weights(sys, t),
        None => (0, 0, 0.0),
    };
    let mix = |x0: f64, x1: f64| if w == 0.0 { x0 } else { (1.0 - w) * x0 + w * x1 };
    let a = sys.a.iter().map(|f| (0..nx).map(|k| mix(f.at(j0, k), f.at(j1, k))).collect()).collect();
    let q = sys.q.iter().map(|f| (0..nx).map(|k| mix(f.at(j0, k), f.at(j1, k))).collect()).collect();
    let l = (0..nx)
        .flat_map(|k| sys.l.block(j0, k).iter().zip(sys.l.block(j1, k)).map(|(x0, x1)| mix(*x0, *x1)).collect::<Vec<_>>())
        .collect();
    Slice { a, q, l }
}

/// Interpolated coupling-like matrix field at time `t`, node-major blocks per
/// sample column.
pub(crate) fn matrix_field_at(f: &crate::matrixkit::MatrixField, period_t: f64, t: f64) -> Vec<f64> {
    let nt = f.nt;
    let s = (t / period_t * nt as f64).rem_euclid(nt as f64);
    let j0 = (s.floor() as usize).min(nt - 1);
    let w = s - j0 as f64;
    let j1 = (j0 + 1) % nt;
    (0..f.nx)
        .flat_map(|k| f.block(j0, k).iter().zip(f.block(j1, k)).map(|(x0, x1)| (1.0 - w) * x0 + w * x1).collect::<Vec<_>>())
        .collect()
}

/// Spatial operator `E_t + L_t` of the tilted problem at one instant
/// (`None` for time-independent systems). Returns the operator and the
/// number of stencil rows that fell back to upwind advection.
pub(crate) fn spatial_operator(sys: &System, z: f64, layout: &Layout, t: Option<f64>) -> (BlockTri, usize) {
    let n = sys.n;
    let nn = n * n;
    let nx = sys.cell.nx;
    let nb = layout.nodes;
    let sl = slice_at(sys, t);
    let mut lower = vec![0.0; nb * n];
    let mut upper = vec![0.0; nb * n];
    let mut diag = vec![0.0; nb * nn];
    let mut fallbacks = 0;
    let ode = sys.cell.ode_mode();
    let h = sys.cell.h();
    let h2 = h * h;
    for (p, &col) in layout.cols.iter().enumerate() {
        diag[p * nn..(p + 1) * nn].copy_from_slice(&sl.l[col * nn..(col + 1) * nn]);
        for i in 0..n {
            let a0 = sl.a[i][col];
            let q0 = sl.q[i][col];
            let centre = if ode {
                a0 * z * z - q0 * z
            } else {
                let am = sl.a[i][(col + nx - 1) % nx];
                let ap = sl.a[i][(col + 1) % nx];
                let aplus = 0.5 * (a0 + ap);
                let aminus = 0.5 * (am + a0);
                // tilt drift in skew form: z[(a u)' + a u'] with face averages
                let mut up = aplus / h2 - (q0 - 2.0 * aplus * z) / (2.0 * h);
                let mut lo = aminus / h2 + (q0 - 2.0 * aminus * z) / (2.0 * h);
                let mut adv_centre = 0.0;
                if up < 0.0 || lo < 0.0 {
                    fallbacks += 1;
                    let b = q0 - 2.0 * a0 * z;
                    if b > 0.0 {
                        up = aplus / h2;
                        lo = aminus / h2 + b / h;
                        adv_centre = -b / h;
                    } else {
                        up = aplus / h2 - b / h;
                        lo = aminus / h2;
                        adv_centre = b / h;
                    }
                    adv_centre += z * (ap - am) / (2.0 * h);
                }
                if layout.periodic || p > 0 {
                    lower[p * n + i] = lo;
                }
                if layout.periodic || p + 1 < nb {
                    upper[p * n + i] = up;
                }
                -(aplus + aminus) / h2 + adv_centre + a0 * z * z - q0 * z
            };
            diag[p * nn + i * n + i] += centre;
        }
    }
    (BlockTri { nb, n, periodic: layout.periodic, lower, upper, diag }, fallbacks)
}

/// Implicit-Euler evolution over one period of `ω∂t u = (E_t + L_t + c)u`.
#[derive(Debug)]
pub struct MonodromyContext {
    pub z: f64,
    pub substeps: usize,
    /// Shift `c`; the Floquet relation is `λ = c − (ω/T) ln ρ`.
    pub shift: f64,
    pub dt: f64,
    pub omega: f64,
    pub period_t: f64,
    pub species: usize,
    pub nodes: usize,
    /// Stencil rows that needed upwind advection to stay monotone.
    pub upwind_rows: usize,
    pub(crate) layout: Layout,
    step_op: Vec<usize>,
    ops: Vec<BlockTri>,
    fwd: Vec<BlockLu>,
    adj: OnceLock<Result<Vec<BlockLu>>>,
}

pub fn assemble(sys: &System, z: f64, substeps: usize) -> Result<MonodromyContext> {
    assemble_with(sys, z, substeps, Boundary::Periodic)
}

pub fn assemble_with(sys: &System, z: f64, substeps: usize, boundary: Boundary) -> Result<MonodromyContext> {
    sys.validate()?;
    if substeps < sys.cell.nt {
        return Err(Error::Schema(format!("substeps {substeps} must be at least nt = {}", sys.cell.nt)));
    }
    if !z.is_finite() {
        return Err(Error::Schema("tilt must be finite".into()));
    }
    let layout = Layout::new(sys, boundary)?;
    let dt = sys.cell.period_t / substeps as f64;
    let autonomous = sys.is_time_independent();
    let built: Vec<(BlockTri, usize)> = if autonomous {
        vec![spatial_operator(sys, z, &layout, None)]
    } else {
        (0..substeps).into_par_iter().map(|k| spatial_operator(sys, z, &layout, Some((k as f64 + 0.5) * dt))).collect()
    };
    let upwind_rows = built.iter().map(|b| b.1).max().unwrap_or(0);
    let ops: Vec<BlockTri> = built.into_iter().map(|b| b.0).collect();
    let max_row = ops.iter().map(|o| o.max_row_sum()).fold(f64::NEG_INFINITY, f64::max);
    let shift = -(max_row.max(0.0)).ceil();
    let beta = dt / sys.omega;
    let alpha = 1.0 - beta * shift;
    let fwd = ops.par_iter().map(|o| o.factor(alpha, beta)).collect::<Result<Vec<_>>>()?;
    let step_op = if autonomous { vec![0; substeps] } else { (0..substeps).collect() };
    Ok(MonodromyContext {
        z,
        substeps,
        shift,
        dt,
        omega: sys.omega,
        period_t: sys.cell.period_t,
        species: sys.n,
        nodes: layout.nodes,
        upwind_rows,
        layout,
        step_op,
        ops,
        fwd,
        adj: OnceLock::new(),
    })
}

impl MonodromyContext {
    pub fn dim(&self) -> usize {
        self.species * self.nodes
    }

    /// Midpoint time of substep `k`, where the coefficients are evaluated.
    pub fn substep_time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt
    }

    fn adjoint_factors(&self) -> Result<&Vec<BlockLu>> {
        let beta = self.dt / self.omega;
        let alpha = 1.0 - beta * self.shift;
        self.adj
            .get_or_init(|| self.ops.par_iter().map(|o| o.transpose().factor(alpha, beta)).collect())
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// One implicit step `x ← (I − dt/ω (A_k + c))⁻¹ x`.
    pub(crate) fn step(&self, k: usize, x: &mut [f64]) {
        self.fwd[self.step_op[k]].solve_in_place(x);
    }

    pub(crate) fn step_adjoint(&self, k: usize, x: &mut [f64]) -> Result<()> {
        self.adjoint_factors()?[self.step_op[k]].solve_in_place(x);
        Ok(())
    }

    pub(crate) fn apply_raw(&self, x: &mut [f64]) {
        for k in 0..self.substeps {
            self.step(k, x);
        }
    }

    /// `Gᵀ = R_1ᵀ ⋯ R_Mᵀ`: transposed steps in reverse order.
    pub(crate) fn apply_adjoint_raw(&self, x: &mut [f64]) -> Result<()> {
        let adj = self.adjoint_factors()?;
        for k in (0..self.substeps).rev() {
            adj[self.step_op[k]].solve_in_place(x);
        }
        Ok(())
    }

    pub fn eigenvalue_from_multiplier(&self, rho: f64) -> f64 {
        self.shift - self.omega / self.period_t * rho.ln()
    }
}

fn check_shape(ctx: &MonodromyContext, u: &StateVector) -> Result<()> {
    if u.species != ctx.species || u.nodes != ctx.nodes || u.values.len() != ctx.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state is {}x{}, context expects {}x{}",
            u.species, u.nodes, ctx.species, ctx.nodes
        )));
    }
    Ok(())
}

pub fn monodromy_apply(ctx: &MonodromyContext, u0: &StateVector) -> Result<StateVector> {
    check_shape(ctx, u0)?;
    let mut x = u0.to_node_major();
    ctx.apply_raw(&mut x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularStep("non-finite state after one period".into()));
    }
    Ok(StateVector::from_node_major(ctx.species, ctx.nodes, &x))
}

pub fn monodromy_apply_adjoint(ctx: &MonodromyContext, v0: &StateVector) -> Result<StateVector> {
    check_shape(ctx, v0)?;
    let mut x = v0.to_node_major();
    ctx.apply_adjoint_raw(&mut x)?;
    Ok(StateVector::from_node_major(ctx.species, ctx.nodes, &x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixkit::{MatrixField, SquareMatrix};
    use crate::model::{PeriodicCell, ScalarField};

    fn dense(op: &BlockTri) -> Vec<Vec<f64>> {
        let d = op.dim();
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|c| {
                let mut e = vec![0.0; d];
                e[c] = 1.0;
                op.apply(&e)
            })
            .collect();
        (0..d).map(|r| (0..d).map(|c| cols[c][r]).collect()).collect()
    }

    fn random_op(nb: usize, n: usize, periodic: bool, seed: u64) -> BlockTri {
        let mut s = seed;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let lower = (0..nb * n).map(|_| rnd()).collect();
        let upper = (0..nb * n).map(|_| rnd()).collect();
        let diag = (0..nb * n * n).map(|_| rnd() - 0.5).collect();
        BlockTri { nb, n, periodic, lower, upper, diag }
    }

    #[test]
    fn block_solver_inverts_shifted_operator() {
        for &(nb, n, periodic) in &[(5, 2, true), (3, 3, true), (6, 1, true), (4, 2, false), (1, 3, false), (9, 4, true)] {
            let op = random_op(nb, n, periodic, (nb * 31 + n) as u64);
            let alpha = 1.0 + op.abscissa_bound().abs() * 2.0 + 5.0;
            let lu = op.factor(alpha, 1.0).unwrap();
            let f: Vec<f64> = (0..op.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut x = f.clone();
            lu.solve_in_place(&mut x);
            let ax = op.apply(&x);
            for i in 0..op.dim() {
                let r = alpha * x[i] - ax[i] - f[i];
                assert!(r.abs() < 1e-12, "nb={nb} n={n} periodic={periodic} residual {r}");
            }
        }
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let op = random_op(5, 2, true, 7);
        let a = dense(&op);
        let at = dense(&op.transpose());
        for r in 0..a.len() {
            for c in 0..a.len() {
                assert_eq!(a[r][c], at[c][r]);
            }
        }
    }

    fn heat(nx: usize) -> System {
        let cell = PeriodicCell::new(1.0, 1.0, 4, nx).unwrap();
        System::constant(cell, &[1.0], &[0.0], &SquareMatrix::zeros(1))
    }

    #[test]
    fn zero_state_and_linearity() {
        let mut sys = heat(16);
        sys.l = MatrixField::from_fn(1, 4, 16, |j, k| SquareMatrix::diagonal(&[((j + k) as f64).cos()]));
        let ctx = assemble(&sys, 0.3, 32).unwrap();
        let zero = StateVector::filled(1, 16, 0.0);
        assert!(monodromy_apply(&ctx, &zero).unwrap().values.iter().all(|v| *v == 0.0));
        let u = StateVector { species: 1, nodes: 16, values: (0..16).map(|k| 1.0 + (k as f64).sin()).collect() };
        let v = StateVector { species: 1, nodes: 16, values: (0..16).map(|k| (k as f64 * 0.3).cos().abs()).collect() };
        let w = StateVector { species: 1, nodes: 16, values: u.values.iter().zip(&v.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect() };
        let (gu, gv, gw) = (monodromy_apply(&ctx, &u).unwrap(), monodromy_apply(&ctx, &v).unwrap(), monodromy_apply(&ctx, &w).unwrap());
        for k in 0..16 {
            assert!((gw.values[k] - 2.0 * gu.values[k] + 0.5 * gv.values[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let cell = PeriodicCell::new(1.0, 1.0, 4, 8).unwrap();
        let mut sys = System::constant(cell, &[1.0], &[0.0], &SquareMatrix::zeros(1));
        sys.a = vec![ScalarField::constant(4, 8, 1e-300)];
        let ctx = assemble(&sys, 0.0, 8).unwrap();
        let u = StateVector { species: 1, nodes: 8, values: (0..8).map(|k| k as f64).collect() };
        let g = monodromy_apply(&ctx, &u).unwrap();
        for k in 0..8 {
            assert!((g.values[k] - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_scales_cosine_mode() {
        let nx = 64;
        let sys = heat(nx);
        let m = 4096;
        let ctx = assemble(&sys, 0.0, m).unwrap();
        let h = 1.0 / nx as f64;
        let u: Vec<f64> = (0..nx).map(|k| (2.0 * std::f64::consts::PI * k as f64 * h).cos()).collect();
        let mut x = u.clone();
        ctx.step(0, &mut x);
        let symbol = 2.0 * (1.0 - (2.0 * std::f64::consts::PI * h).cos()) / (h * h);
        let exact = 1.0 / (1.0 + ctx.dt * symbol);
        for k in 0..nx {
            assert!((x[k] - exact * u[k]).abs() < 1e-12);
        }
        assert!((exact - (-symbol * ctx.dt).exp()).abs() < 1e-4);
    }

    #[test]
    fn positivity_and_mass_conservation() {
        let nx = 12;
        let cell = PeriodicCell::new(1.0, 1.0, 6, nx).unwrap();
        let s = SquareMatrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5], vec![0.5, 0.3, 0.2]]).unwrap();
        let mu = [1.0, 0.5, 2.0];
        let l = SquareMatrix::from_fn(3, |i, j| (s[(i, j)] - if i == j { 1.0 } else { 0.0 }) * mu[j]);
        let mut sys = System::constant(cell, &[1.0, 1.0, 1.0], &[0.0; 3], &l);
        sys.a = (0..3).map(|i| ScalarField::from_fn(6, nx, |j, k| 1.0 + 0.5 * ((i + j + k) as f64).sin())).collect();
        let ctx = assemble(&sys, 0.0, 60).unwrap();
        let mut u = StateVector::filled(3, nx, 0.0);
        u.values[5] = 1.0;
        u.values[20] = 2.0;
        let g = monodromy_apply(&ctx, &u).unwrap();
        assert!(g.values.iter().all(|v| *v > 0.0));
        // columns of the coupling sum to zero, so 𝟙ᵀ is scaled by 1/(1 - shift·dt) per step
        let before: f64 = u.values.iter().sum();
        let after: f64 = g.values.iter().sum();
        let factor = (1.0 - ctx.shift * ctx.dt / ctx.omega).powi(60);
        assert!((before - after * factor).abs() < 1e-10);
    }

    #[test]
    fn dirichlet_layout_counts_interior_nodes() {
        let sys = heat(8);
        let l = Layout::new(&sys, Boundary::Dirichlet { half_width: 1.0 }).unwrap();
        assert_eq!(l.nodes, 15);
        assert_eq!(l.cols[7], 0);
        assert!(Layout::new(&sys, Boundary::Dirichlet { half_width: 0.5 }).is_err());
    }
}
