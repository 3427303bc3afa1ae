//! Principal periodic eigenvalues of the tilted operator, their maximization
//! over the tilt, Dirichlet eigenvalues on intervals and the block extension
//! for reducible couplings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_with, matrix_field_at, spatial_operator, BlockTri, Boundary, Layout, MonodromyContext, StateVector};
use crate::error::{Error, Result};
use crate::matrixkit::MatrixField;
use crate::model::{block_decompose, System};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Autonomous shift-invert when the coefficients do not depend on time,
    /// monodromy power iteration otherwise.
    Auto,
    Monodromy,
    Autonomous,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenOptions {
    pub substeps: usize,
    pub richardson: bool,
    /// Relative drift tolerance of the power iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub engine: Engine,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { substeps: 512, richardson: true, tol: 1e-12, max_iter: 200_000, engine: Engine::Auto }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenResult {
    pub lambda: f64,
    pub z: f64,
    /// Positive, unit max norm, at t = 0.
    pub eigenfunction: StateVector,
    pub residual: f64,
    pub iterations: usize,
    pub extrapolated: bool,
    pub nx: usize,
    #[serde(rename = "M")]
    pub substeps: usize,
    pub engine: Engine,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZMaximum {
    pub z_star: f64,
    pub lambda_1: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZOptions {
    pub tol: f64,
    pub zmax: f64,
}

impl Default for ZOptions {
    fn default() -> Self {
        ZOptions { tol: 1e-4, zmax: 64.0 }
    }
}

const RESIDUAL_TOL: f64 = 1e-8;

struct PowerOutcome {
    rho: f64,
    x: Vec<f64>,
    residual: f64,
    iterations: usize,
}

/// Power iteration on the monodromy map (or its transpose) from `𝟙`.
/// Stops when the Rayleigh estimate `Σ Gx / Σ x` has drifted by less than
/// `tol` (relative) for 10 consecutive periods, or when the Collatz–Wielandt
/// bracket closes, and the scaled residual is below `RESIDUAL_TOL`.
fn power_iteration(ctx: &MonodromyContext, adjoint: bool, tol: f64, max_iter: usize) -> Result<PowerOutcome> {
    let dim = ctx.dim();
    let mut x = vec![1.0; dim];
    let mut prev = f64::NAN;
    let mut calm = 0;
    for it in 1..=max_iter {
        let mut y = x.clone();
        if adjoint {
            ctx.apply_adjoint_raw(&mut y)?;
        } else {
            ctx.apply_raw(&mut y);
        }
        let sy: f64 = y.iter().sum();
        let sx: f64 = x.iter().sum();
        let rho = sy / sx;
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::SingularStep(format!("monodromy produced multiplier estimate {rho}")));
        }
        let xmax = x.iter().cloned().fold(0.0, f64::max);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut res = 0.0f64;
        for (a, b) in x.iter().zip(&y) {
            res = res.max((b - rho * a).abs());
            if *a > 1e-200 * xmax {
                let r = b / a;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let residual = res / (rho * xmax);
        let ymax = y.iter().cloned().fold(0.0, f64::max);
        y.iter_mut().for_each(|v| *v /= ymax);
        x = y;
        if (rho - prev).abs() <= tol * rho {
            calm += 1;
        } else {
            calm = 0;
        }
        prev = rho;
        let bracket_closed = hi - lo <= tol * rho;
        if (calm >= 10 || bracket_closed) && residual <= RESIDUAL_TOL {
            return Ok(PowerOutcome { rho, x, residual, iterations: it });
        }
    }
    Err(Error::NoConvergence(format!("monodromy power iteration did not settle in {max_iter} periods")))
}

struct InverseOutcome {
    mu: f64,
    x: Vec<f64>,
    residual: f64,
    iterations: usize,
}

/// Spectral abscissa of an essentially nonnegative irreducible operator by
/// shift-invert iteration. The shift always stays above the Collatz–Wielandt
/// upper bound, so every solve is with a nonsingular M-matrix and the
/// iterates remain positive.
fn shift_invert(op: &BlockTri, tol: f64) -> Result<InverseOutcome> {
    let dim = op.dim();
    let mut sigma = op.abscissa_bound() + 1.0;
    let mut x = vec![1.0; dim];
    let mut best: Option<(f64, f64)> = None;
    let mut stall = 0;
    let scale = 1.0 + op.diag.iter().fold(0.0f64, |m, v| m.max(v.abs())) + op.lower.iter().chain(&op.upper).fold(0.0f64, |m, v| m.max(v.abs()));
    for it in 1..=300 {
        let lu = op.factor(sigma, 1.0)?;
        let mut y = x.clone();
        lu.solve_in_place(&mut y);
        let ymax = y.iter().cloned().fold(0.0, f64::max);
        if !(ymax > 0.0) || !ymax.is_finite() {
            return Err(Error::SingularStep("shift-invert iterate lost positivity".into()));
        }
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        for (a, b) in x.iter().zip(&y) {
            if *b > 1e-250 * ymax {
                let r = a / b;
                rmin = rmin.min(r);
                rmax = rmax.max(r);
            }
        }
        let (lo, hi) = (sigma - rmax, sigma - rmin);
        y.iter_mut().for_each(|v| *v /= ymax);
        x = y;
        let gap = hi - lo;
        let mid = 0.5 * (lo + hi);
        let improved = best.map_or(true, |(g, _)| gap < 0.5 * g);
        if improved {
            best = Some((gap, mid));
            stall = 0;
        } else {
            stall += 1;
        }
        let done = gap <= 10.0 * tol * (1.0 + mid.abs()) || (stall >= 6 && gap <= 1e-8 * (1.0 + mid.abs()));
        if done {
            let ax = op.apply(&x);
            let residual = ax.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - mid * b).abs())) / scale;
            return Ok(InverseOutcome { mu: mid, x, residual, iterations: it });
        }
        let delta = gap.max(1e-9 * (1.0 + hi.abs()));
        sigma = hi + delta;
    }
    Err(Error::NoConvergence("shift-invert iteration did not settle".into()))
}

fn check_irreducible(sys: &System) -> Result<()> {
    sys.validate()?;
    if sys.reducible || !sys.is_irreducible() {
        return Err(Error::ReducibleSpec("coupling is reducible; use the block extension".into()));
    }
    Ok(())
}

fn use_autonomous(sys: &System, opts: &EigenOptions) -> Result<bool> {
    match opts.engine {
        Engine::Auto => Ok(sys.is_time_independent()),
        Engine::Monodromy => Ok(false),
        Engine::Autonomous => {
            if sys.is_time_independent() {
                Ok(true)
            } else {
                Err(Error::HypothesisNotMet("autonomous engine needs time-independent coefficients".into()))
            }
        }
    }
}

fn eigen_general(sys: &System, z: f64, opts: &EigenOptions, boundary: Boundary, adjoint: bool) -> Result<EigenResult> {
    check_irreducible(sys)?;
    let nodes_of = |x: &[f64], nodes: usize| StateVector::from_node_major(sys.n, nodes, x);
    if use_autonomous(sys, opts)? {
        let layout = Layout::new(sys, boundary)?;
        let (op, _) = spatial_operator(sys, z, &layout, None);
        let op = if adjoint { op.transpose() } else { op };
        let out = shift_invert(&op, opts.tol)?;
        return Ok(EigenResult {
            lambda: -out.mu,
            z,
            eigenfunction: nodes_of(&out.x, layout.nodes),
            residual: out.residual,
            iterations: out.iterations,
            extrapolated: false,
            nx: sys.cell.nx,
            substeps: 0,
            engine: Engine::Autonomous,
        });
    }
    let run = |m: usize| -> Result<(f64, PowerOutcome, usize)> {
        let ctx = assemble_with(sys, z, m, boundary)?;
        let out = power_iteration(&ctx, adjoint, opts.tol, opts.max_iter)?;
        Ok((ctx.eigenvalue_from_multiplier(out.rho), out, ctx.nodes))
    };
    let m = opts.substeps;
    if opts.richardson {
        let (l1, o1, _) = run(m)?;
        let (l2, o2, nodes) = run(2 * m)?;
        Ok(EigenResult {
            lambda: 2.0 * l2 - l1,
            z,
            eigenfunction: nodes_of(&o2.x, nodes),
            residual: o2.residual,
            iterations: o1.iterations + o2.iterations,
            extrapolated: true,
            nx: sys.cell.nx,
            substeps: m,
            engine: Engine::Monodromy,
        })
    } else {
        let (l, o, nodes) = run(m)?;
        Ok(EigenResult {
            lambda: l,
            z,
            eigenfunction: nodes_of(&o.x, nodes),
            residual: o.residual,
            iterations: o.iterations,
            extrapolated: false,
            nx: sys.cell.nx,
            substeps: m,
            engine: Engine::Monodromy,
        })
    }
}

pub fn principal_eigenpair(sys: &System, z: f64, opts: &EigenOptions) -> Result<EigenResult> {
    eigen_general(sys, z, opts, Boundary::Periodic, false)
}

/// Same eigenvalue; the eigenfunction is that of the adjoint evolution.
pub fn adjoint_eigenpair(sys: &System, z: f64, opts: &EigenOptions) -> Result<EigenResult> {
    eigen_general(sys, z, opts, Boundary::Periodic, true)
}

pub fn lambda_prime(sys: &System, opts: &EigenOptions) -> Result<EigenResult> {
    principal_eigenpair(sys, 0.0, opts)
}

/// Principal eigenvalue on `[-R, R]` with zero boundary values (z = 0).
pub fn dirichlet_eigenvalue(sys: &System, half_width: f64, opts: &EigenOptions) -> Result<EigenResult> {
    eigen_general(sys, 0.0, opts, Boundary::Dirichlet { half_width }, false)
}

/// `λ_{1,z}` for every tilt in `zs`, evaluated in parallel.
pub fn lambda_z_scan(sys: &System, zs: &[f64], opts: &EigenOptions) -> Result<Vec<EigenResult>> {
    zs.par_iter().map(|&z| principal_eigenpair(sys, z, opts)).collect()
}

/// `λ_{1,z}`, routed through the block extension (minimum over blocks) when
/// the coupling is reducible.
pub fn lambda_z_extended(sys: &System, z: f64, opts: &EigenOptions) -> Result<f64> {
    sys.validate()?;
    let bs = block_decompose(sys);
    if bs.count() == 1 {
        return Ok(principal_eigenpair(&sys.with_reducible(false), z, opts)?.lambda);
    }
    let mut m = f64::INFINITY;
    for b in bs.blocks() {
        m = m.min(principal_eigenpair(&sys.subsystem(&b), z, opts)?.lambda);
    }
    Ok(m)
}

/// Maximizes a concave function of one variable: doubling from 0 to bracket
/// the maximum, then golden-section search down to `tol`.
pub fn maximize_concave(mut f: impl FnMut(f64) -> Result<f64>, zopts: &ZOptions) -> Result<ZMaximum> {
    let mut evals = 0;
    let mut eval = |z: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        f(z)
    };
    let f0 = eval(0.0, &mut evals)?;
    let fp = eval(1.0, &mut evals)?;
    let (mut lo, mut hi);
    if fp > f0 {
        let (mut a, mut b, mut fb) = (0.0, 1.0, fp);
        loop {
            let c = 2.0 * b;
            if c > zopts.zmax {
                return Err(Error::BracketFailure(format!("no decrease found for z up to {}", zopts.zmax)));
            }
            let fc = eval(c, &mut evals)?;
            if fc <= fb {
                lo = a;
                hi = c;
                break;
            }
            a = b;
            b = c;
            fb = fc;
        }
    } else {
        let fm = eval(-1.0, &mut evals)?;
        if fm > f0 {
            let (mut a, mut b, mut fb) = (0.0, -1.0, fm);
            loop {
                let c = 2.0 * b;
                if -c > zopts.zmax {
                    return Err(Error::BracketFailure(format!("no decrease found for z down to -{}", zopts.zmax)));
                }
                let fc = eval(c, &mut evals)?;
                if fc <= fb {
                    lo = c;
                    hi = a;
                    break;
                }
                a = b;
                b = c;
                fb = fc;
            }
        } else {
            lo = -1.0;
            hi = 1.0;
        }
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = eval(c, &mut evals)?;
    let mut fd = eval(d, &mut evals)?;
    while hi - lo > zopts.tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = eval(c, &mut evals)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = eval(d, &mut evals)?;
        }
    }
    let (z_star, lambda_1) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok(ZMaximum { z_star, lambda_1, bracket: (lo, hi), evaluations: evals })
}

/// `λ₁ = max_z λ_{1,z}`.
pub fn lambda_one(sys: &System, zopts: &ZOptions, opts: &EigenOptions) -> Result<ZMaximum> {
    check_irreducible(sys)?;
    maximize_concave(|z| Ok(principal_eigenpair(sys, z, opts)?.lambda), zopts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub species: Vec<usize>,
    pub lambda_prime: EigenResult,
    pub lambda_one: ZMaximum,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducibleExtension {
    pub blocks: Vec<BlockReport>,
    /// Minimum over blocks of each block's own `λ₁`.
    pub lambda0: f64,
    /// `max_z min_k λ_{1,z}(Q_k)`.
    pub lambda1_tilde: ZMaximum,
}

pub fn reducible_extension(sys: &System, zopts: &ZOptions, opts: &EigenOptions) -> Result<ReducibleExtension> {
    sys.validate()?;
    let subs: Vec<(Vec<usize>, System)> = block_decompose(sys).blocks().into_iter().map(|b| (b.clone(), sys.subsystem(&b))).collect();
    let blocks = subs
        .par_iter()
        .map(|(idx, s)| {
            Ok(BlockReport { species: idx.clone(), lambda_prime: lambda_prime(s, opts)?, lambda_one: lambda_one(s, zopts, opts)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda0 = blocks.iter().map(|b| b.lambda_one.lambda_1).fold(f64::INFINITY, f64::min);
    let lambda1_tilde = maximize_concave(
        |z| {
            let vals = subs.par_iter().map(|(_, s)| Ok(principal_eigenpair(s, z, opts)?.lambda)).collect::<Result<Vec<f64>>>()?;
            Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
        },
        zopts,
    )?;
    Ok(ReducibleExtension { blocks, lambda0, lambda1_tilde })
}

/// Exact derivative of the discrete eigenvalue along `L + α δL` at α = 0,
/// from direct and adjoint eigenfunctions paired over every substep.
pub(crate) fn eigen_derivative_impl(sys: &System, z: f64, dl: &MatrixField, opts: &EigenOptions) -> Result<f64> {
    check_irreducible(sys)?;
    if (dl.n, dl.nt, dl.nx) != (sys.n, sys.cell.nt, sys.cell.nx) {
        return Err(Error::ShapeMismatch("perturbation field shape differs from the coupling".into()));
    }
    let n = sys.n;
    let nn = n * n;
    if use_autonomous(sys, opts)? {
        let layout = Layout::new(sys, Boundary::Periodic)?;
        let (op, _) = spatial_operator(sys, z, &layout, None);
        let u = shift_invert(&op, opts.tol)?.x;
        let v = shift_invert(&op.transpose(), opts.tol)?.x;
        let nt = dl.nt as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, &col) in layout.cols.iter().enumerate() {
            for r in 0..n {
                den += v[p * n + r] * u[p * n + r];
                for c in 0..n {
                    let mean = (0..dl.nt).map(|j| dl.block(j, col)[r * n + c]).sum::<f64>() / nt;
                    num += v[p * n + r] * mean * u[p * n + c];
                }
            }
        }
        return Ok(-num / den);
    }
    let run = |m: usize| -> Result<f64> {
        let ctx = assemble_with(sys, z, m, Boundary::Periodic)?;
        let u = power_iteration(&ctx, false, opts.tol, opts.max_iter)?.x;
        let v = power_iteration(&ctx, true, opts.tol, opts.max_iter)?.x;
        let mut states = Vec::with_capacity(m);
        let mut x = u;
        for s in 0..m {
            ctx.step(s, &mut x);
            states.push(x.clone());
        }
        let mut w = v;
        let (mut num, mut den) = (0.0, 0.0);
        for s in (0..m).rev() {
            den += w.iter().zip(&states[s]).map(|(a, b)| a * b).sum::<f64>();
            ctx.step_adjoint(s, &mut w)?;
            let d = matrix_field_at(dl, sys.cell.period_t, ctx.substep_time(s));
            let us = &states[s];
            for (p, &col) in ctx.layout.cols.iter().enumerate() {
                let blk = &d[col * nn..(col + 1) * nn];
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += blk[r * n + c] * us[p * n + c];
                    }
                    num += w[p * n + r] * acc;
                }
            }
        }
        Ok(-num / den)
    };
    if opts.richardson {
        Ok(2.0 * run(2 * opts.substeps)? - run(opts.substeps)?)
    } else {
        run(opts.substeps)
    }
}
