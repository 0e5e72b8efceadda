//! Preconditioned conjugate gradient on the assembled operator.
//!
//! One generic loop serves three storage variants: `Double` runs binary64
//! through the scoped (instrumentable) executor; `Single` and `Mixed` run
//! native f32 with plain counting, differing only in whether the solution
//! is widened back to binary64 at the end. Setup (rhs, preconditioner,
//! geometry) is always computed in binary64 and converted once at loop
//! entry. Native variants require a pure-IEEE scope: emulation backendsable
//! to bend binary64 arithmetic say nothing about true f32 hardware, and
//! silently combining the two would produce numbers with no meaning.
//!
//! The recursion tracks the preconditioned residual exactly as the classic
//! loop does; the reported residual is sqrt(r^T C r), evaluated in binary64
//! regardless of variant. Scalar divisions for alpha and beta count under
//! `glsc3` (they continue the reduction that produced the operands).

use serde::{Deserialize, Serialize};

use crate::context::{Context, Exec, KernelId, Native, Scoped};
use crate::error::{Error, Result};
use crate::kernels::{add2s1, add2s2, apply_mask, ax, gather_scatter, glsc3, AxGeom, AxWork};
use crate::mesh::Mesh;
use crate::num::{FpOp, Real};

/// Every kernel the loop routes arithmetic through — the set precision
/// experiments mean by "the solver" (setup and analysis stay binary64).
pub const CG_KERNELS: [KernelId; 7] = [
    KernelId::Mxm,
    KernelId::Glsc3,
    KernelId::Add2s1,
    KernelId::Add2s2,
    KernelId::Add2,
    KernelId::Ax,
    KernelId::SolveM,
];

/// Storage/arithmetic variant of the solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Binary64 storage, ops dispatched through the scope's backends.
    Double,
    /// Native f32 storage and arithmetic; the solution stays f32.
    Single,
    /// Native f32 solve whose outputs are widened back to binary64.
    Mixed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Double => "double",
            Variant::Single => "single",
            Variant::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Variant::Double),
            "single" => Ok(Variant::Single),
            "mixed" => Ok(Variant::Mixed),
            _ => Err(Error::Config(format!(
                "variant must be double, single or mixed, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precond {
    None,
    Jacobi,
}

impl std::str::FromStr for Precond {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Precond::None),
            "jacobi" => Ok(Precond::Jacobi),
            _ => Err(Error::Config(format!(
                "preconditioner must be none or jacobi, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CgConfig {
    /// Absolute tolerance on sqrt(r^T C r).
    pub tol: f64,
    pub miter: u32,
    pub variant: Variant,
    pub precond: Precond,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            tol: 1e-10,
            miter: 1000,
            variant: Variant::Double,
            precond: Precond::None,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.miter == 0 {
            return Err(Error::Config("miter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scalars of one CG iteration, as recorded in the trace.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterRecord {
    pub iteration: u32,
    pub residual: f64,
    pub rtz1: f64,
    pub beta: f64,
    pub alpha: f64,
    pub pap: f64,
    pub rtr: f64,
}

/// Solution vector at the width the loop ran at.
#[derive(Clone, Debug)]
pub enum Solution {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl Solution {
    pub fn len(&self) -> usize {
        match self {
            Solution::F64(v) => v.len(),
            Solution::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to binary64 (exact).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Solution::F64(v) => v.clone(),
            Solution::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            Solution::F64(_) => 8,
            Solution::F32(_) => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub solution: Solution,
    pub iterations: u32,
    pub converged: bool,
    pub final_residual: f64,
    pub trace: Vec<IterRecord>,
}

/// Builds the right-hand side: a smooth source (product of sines, zero on
/// the boundary) scaled by the diagonal mass matrix, made continuous and
/// masked. Multiplications route through the `init_rhs` kernel so the input
/// itself can be put under an emulation backend.
pub fn init_rhs(mesh: &Mesh, ctx: &mut Context) -> Vec<f64> {
    use std::f64::consts::PI;
    const K: KernelId = KernelId::InitRhs;
    let npts = mesh.npts();
    let mut ex = Scoped::new(ctx);
    ex.record_call(K);
    ex.traffic(K, 4 * npts as u64 * 8, npts as u64 * 8);
    let mut b = vec![0.0; npts];
    for l in 0..npts {
        let sx = (PI * mesh.coords[0][l]).sin();
        let sy = (PI * mesh.coords[1][l]).sin();
        let sz = (PI * mesh.coords[2][l]).sin();
        let sxy = ex.op(K, FpOp::Mul, sx, sy);
        let f = ex.op(K, FpOp::Mul, sxy, sz);
        b[l] = ex.op(K, FpOp::Mul, mesh.bm[l], f);
    }
    gather_scatter(K, &mut b, &mesh.gs, &mut ex);
    apply_mask(K, &mut b, &mesh.mask, &mut ex);
    b
}

/// Assembled diagonal of the operator, in plain binary64.
///
/// Per element, the diagonal of D^T G D at node (i,j,k) reduces to three
/// one-dimensional sums plus the cross-metric corner terms:
///   sum_m g11(m,j,k) D(m,i)^2 + (s and t analogues)
///   + 2*(g12 D(i,i) D(j,j) + g13 D(i,i) D(k,k) + g23 D(j,j) D(k,k)).
/// Element contributions are then summed across shared nodes. Constrained
/// nodes get 1.0; a nonpositive interior entry is a geometry defect.
pub fn jacobi_diagonal(mesh: &Mesh) -> Result<Vec<f64>> {
    let n = mesh.gll.nx1;
    let n3 = n * n * n;
    let d = &mesh.gll.d; // row-major D(m,i) = d[m*n + i]
    let g = &mesh.geom;
    let mut diag = vec![0.0; mesh.npts()];

    for e in 0..mesh.nel() {
        let base = e * n3;
        let at = |i: usize, j: usize, k: usize| base + (k * n + j) * n + i;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        let dmi = d[m * n + i];
                        let dmj = d[m * n + j];
                        let dmk = d[m * n + k];
                        s += g[0][at(m, j, k)] * dmi * dmi;
                        s += g[1][at(i, m, k)] * dmj * dmj;
                        s += g[2][at(i, j, m)] * dmk * dmk;
                    }
                    let l = at(i, j, k);
                    let (dii, djj, dkk) = (d[i * n + i], d[j * n + j], d[k * n + k]);
                    s += 2.0 * (g[3][l] * dii * djj + g[4][l] * dii * dkk + g[5][l] * djj * dkk);
                    diag[l] = s;
                }
            }
        }
    }

    for group in mesh.gs.groups() {
        let s: f64 = group.iter().map(|&l| diag[l as usize]).sum();
        for &l in group {
            diag[l as usize] = s;
        }
    }
    for (l, (v, &m)) in diag.iter_mut().zip(&mesh.mask).enumerate() {
        if m {
            *v = 1.0;
        } else if *v <= 0.0 {
            return Err(Error::ZeroDiagonal { index: l });
        }
    }
    Ok(diag)
}

/// z = M^{-1} r: pointwise division by the diagonal, or a plain copy when
/// unpreconditioned (which still moves the data).
fn solve_m<X: Exec>(z: &mut [X::Num], r: &[X::Num], diag: Option<&[X::Num]>, ex: &mut X) {
    const K: KernelId = KernelId::SolveM;
    ex.record_call(K);
    let n = z.len() as u64;
    let w = X::width();
    match diag {
        Some(d) => {
            ex.traffic(K, 2 * n * w, n * w);
            for i in 0..z.len() {
                z[i] = ex.op(K, FpOp::Div, r[i], d[i]);
            }
        }
        None => {
            ex.traffic(K, n * w, n * w);
            z.copy_from_slice(r);
        }
    }
}

struct LoopResult<T> {
    x: Vec<T>,
    iterations: u32,
    converged: bool,
    final_residual: f64,
    trace: Vec<IterRecord>,
}

/// The fixed-form CG loop. Every binary64 input is converted to the working
/// width here, once; all arithmetic goes through the executor.
fn cg_loop<X: Exec>(
    mesh: &Mesh,
    b: &[f64],
    diag: Option<&[f64]>,
    cfg: &CgConfig,
    ex: &mut X,
) -> Result<LoopResult<X::Num>> {
    type N<X> = <X as Exec>::Num;
    let npts = mesh.npts();
    debug_assert_eq!(b.len(), npts);

    let geom = AxGeom::<N<X>>::from_mesh(mesh);
    let c: Vec<N<X>> = mesh.mult.iter().map(|&v| N::<X>::from_f64(v)).collect();
    let diag: Option<Vec<N<X>>> =
        diag.map(|d| d.iter().map(|&v| N::<X>::from_f64(v)).collect());
    let r0: Vec<N<X>> = b.iter().map(|&v| N::<X>::from_f64(v)).collect();

    let mut x = vec![N::<X>::zero(); npts];
    let mut r = r0;
    let mut z = vec![N::<X>::zero(); npts];
    let mut p = vec![N::<X>::zero(); npts];
    let mut w = vec![N::<X>::zero(); npts];
    let mut work = AxWork::new(npts);

    let mut trace = Vec::new();
    let mut rtz1 = N::<X>::zero();
    let mut final_residual = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.miter {
        iterations = iter;
        solve_m(&mut z, &r, diag.as_deref(), ex);
        let rtz2 = rtz1;
        rtz1 = glsc3(&r, &c, &z, ex);
        if rtz1.to_f64() == 0.0 {
            // with an SPD preconditioner this means r = 0 (or fully
            // underflowed): the system is solved exactly
            final_residual = 0.0;
            converged = true;
            trace.push(IterRecord {
                iteration: iter,
                residual: 0.0,
                rtz1: 0.0,
                beta: 0.0,
                alpha: 0.0,
                pap: 0.0,
                rtr: 0.0,
            });
            break;
        }
        let beta = if iter == 1 {
            N::<X>::zero()
        } else {
            ex.op(KernelId::Glsc3, FpOp::Div, rtz1, rtz2)
        };
        add2s1(&mut p, &z, beta, ex);

        ax(&mut w, &p, &geom, &mesh.gs, &mesh.mask, &mut work, ex);

        let pap = glsc3(&w, &c, &p, ex);
        if pap.to_f64() <= 0.0 {
            return Err(Error::IndefiniteOperator {
                iteration: iter,
                pap: pap.to_f64(),
            });
        }
        let alpha = ex.op(KernelId::Glsc3, FpOp::Div, rtz1, pap);
        let alphm = alpha.neg(); // sign flip is exact, not an op
        add2s2(&mut x, &p, alpha, ex);
        add2s2(&mut r, &w, alphm, ex);

        let rtr = glsc3(&r, &c, &r, ex);
        let residual = rtr.to_f64().sqrt();
        trace.push(IterRecord {
            iteration: iter,
            residual,
            rtz1: rtz1.to_f64(),
            beta: beta.to_f64(),
            alpha: alpha.to_f64(),
            pap: pap.to_f64(),
            rtr: rtr.to_f64(),
        });
        final_residual = residual;
        if residual.is_nan() {
            return Err(Error::DivergedNan { iteration: iter });
        }
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(LoopResult {
        x,
        iterations,
        converged,
        final_residual,
        trace,
    })
}

/// Solves with an explicit right-hand side (which must be continuous and
/// masked, as [`init_rhs`] produces).
pub fn solve_with_rhs(
    mesh: &Mesh,
    b: &[f64],
    cfg: &CgConfig,
    ctx: &mut Context,
) -> Result<SolveOutput> {
    cfg.validate()?;
    if cfg.variant != Variant::Double && !ctx.is_pure_ieee() {
        return Err(Error::MixedPaths {
            variant: cfg.variant.name(),
        });
    }
    let diag = match cfg.precond {
        Precond::Jacobi => Some(jacobi_diagonal(mesh)?),
        Precond::None => None,
    };

    match cfg.variant {
        Variant::Double => {
            let mut ex = Scoped::new(ctx);
            let out = cg_loop(mesh, b, diag.as_deref(), cfg, &mut ex)?;
            Ok(SolveOutput {
                solution: Solution::F64(out.x),
                iterations: out.iterations,
                converged: out.converged,
                final_residual: out.final_residual,
                trace: out.trace,
            })
        }
        Variant::Single | Variant::Mixed => {
            let mut ex = Native::<f32>::new(&mut ctx.counters);
            let out = cg_loop(mesh, b, diag.as_deref(), cfg, &mut ex)?;
            let solution = if cfg.variant == Variant::Mixed {
                Solution::F64(out.x.iter().map(|&v| v as f64).collect())
            } else {
                Solution::F32(out.x)
            };
            Ok(SolveOutput {
                solution,
                iterations: out.iterations,
                converged: out.converged,
                final_residual: out.final_residual,
                trace: out.trace,
            })
        }
    }
}

/// Builds the standard right-hand side and solves.
pub fn solve(mesh: &Mesh, cfg: &CgConfig, ctx: &mut Context) -> Result<SolveOutput> {
    let b = init_rhs(mesh, ctx);
    solve_with_rhs(mesh, &b, cfg, ctx)
}

/// Runs the loop on plain native executors — f64 for `Double`, f32
/// otherwise — regardless of any scope. This is the timing-grade path: both
/// widths pay the same per-op counting cost and nothing else.
pub fn solve_native(
    mesh: &Mesh,
    b: &[f64],
    cfg: &CgConfig,
    counters: &mut crate::context::OpCounters,
) -> Result<SolveOutput> {
    cfg.validate()?;
    let diag = match cfg.precond {
        Precond::Jacobi => Some(jacobi_diagonal(mesh)?),
        Precond::None => None,
    };
    match cfg.variant {
        Variant::Double => {
            let mut ex = Native::<f64>::new(counters);
            let out = cg_loop(mesh, b, diag.as_deref(), cfg, &mut ex)?;
            Ok(SolveOutput {
                solution: Solution::F64(out.x),
                iterations: out.iterations,
                converged: out.converged,
                final_residual: out.final_residual,
                trace: out.trace,
            })
        }
        Variant::Single | Variant::Mixed => {
            let mut ex = Native::<f32>::new(counters);
            let out = cg_loop(mesh, b, diag.as_deref(), cfg, &mut ex)?;
            let solution = if cfg.variant == Variant::Mixed {
                Solution::F64(out.x.iter().map(|&v| v as f64).collect())
            } else {
                Solution::F32(out.x)
            };
            Ok(SolveOutput {
                solution,
                iterations: out.iterations,
                converged: out.converged,
                final_residual: out.final_residual,
                trace: out.trace,
            })
        }
    }
}

/// sqrt((b - Ax)^T C (b - Ax)) evaluated in plain binary64, independent of
/// whatever arithmetic produced `x`. This is the measurement the recursive
/// in-loop residual is checked against.
pub fn true_residual(mesh: &Mesh, b: &[f64], x: &[f64]) -> f64 {
    let npts = mesh.npts();
    let mut counters = crate::context::OpCounters::new();
    let mut ex = Native::<f64>::new(&mut counters);
    let geom = AxGeom::<f64>::from_mesh(mesh);
    let mut work = AxWork::new(npts);
    let mut axv = vec![0.0; npts];
    ax(&mut axv, x, &geom, &mesh.gs, &mesh.mask, &mut work, &mut ex);
    let mut s = 0.0;
    for l in 0..npts {
        let r = b[l] - axv[l];
        s += r * mesh.mult[l] * r;
    }
    s.sqrt()
}

/// Max and mean absolute componentwise deviation between two fields.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AccuracyMetrics {
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn accuracy_metrics(x: &[f64], reference: &[f64]) -> Result<AccuracyMetrics> {
    if x.len() != reference.len() || x.is_empty() {
        return Err(Error::Stats(format!(
            "field lengths {} vs {} unusable",
            x.len(),
            reference.len()
        )));
    }
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    for (a, b) in x.iter().zip(reference) {
        let d = (a - b).abs();
        max_abs = max_abs.max(d);
        sum += d;
    }
    Ok(AccuracyMetrics {
        max_abs,
        mean_abs: sum / x.len() as f64,
    })
}

/// Relative improvement of `b` over `a` (e.g. runtimes): (a - b)/a.
pub fn relative_gain(a: f64, b: f64) -> f64 {
    (a - b) / a
}
