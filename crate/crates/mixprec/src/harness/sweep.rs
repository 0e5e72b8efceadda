//! Mantissa-width sweep: rerun the solver with the selected kernels demoted
//! to `vprec:t<t>r<r>` for each t in a list, and find where accuracy stops
//! improving.
//!
//! Each row records both the solver's own (recursive) final residual and the
//! true residual recomputed in binary64 from the returned iterate — at low t
//! the recursive residual can report convergence the iterate doesn't have,
//! and the gap between the two columns is exactly that effect.

use rayon::prelude::*;
use serde::Serialize;

use crate::cg::{init_rhs, solve_with_rhs, true_residual, CgConfig, Variant, CG_KERNELS};
use crate::context::{Backend, Context, KernelId, ScopeMap};
use crate::error::{Error, Result};
use crate::fpemu::VprecFormat;
use crate::harness::output::{csv_header, fmt_f64};
use crate::mesh::Mesh;

/// Kernels swept by default: everything the loop routes arithmetic through.
pub const DEFAULT_SWEEP_KERNELS: [KernelId; 7] = CG_KERNELS;

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub t: u32,
    pub converged: bool,
    pub iterations: u32,
    pub final_residual: f64,
    pub true_residual: f64,
    /// Short defect tag when the run aborted instead of finishing.
    pub defect: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Smallest t from which accuracy has plateaued (see [`plateau_onset`]).
    pub plateau_onset: Option<u32>,
}

/// Smallest t such that every row with t' >= t converged with a true residual
/// within max(10x the t=52 true residual, tol). The 10x band absorbs how far
/// below tol the final step happens to land; the tol floor keeps a reference
/// run that overshot deeply from disqualifying runs that met the stopping
/// criterion honestly. None if the t=52 row is absent or itself failed.
pub fn plateau_onset(rows: &[SweepRow], tol: f64) -> Option<u32> {
    let reference = rows.iter().find(|r| r.t == 52).filter(|r| r.converged)?;
    let band = (10.0 * reference.true_residual).max(tol);
    let ok = |r: &SweepRow| r.converged && r.true_residual <= band;
    let mut onset = None;
    // rows are sorted ascending in t; scan from the top down.
    for r in rows.iter().rev() {
        if ok(r) {
            onset = Some(r.t);
        } else {
            break;
        }
    }
    onset
}

/// Run the sweep. The right-hand side is built once in plain binary64 so all
/// rows solve the identical system; only the loop arithmetic is demoted.
pub fn sweep_vprec(
    mesh: &Mesh,
    cg: &CgConfig,
    kernels: &[KernelId],
    t_values: &[u32],
    r: u32,
) -> Result<SweepOutcome> {
    if cg.variant != Variant::Double {
        return Err(Error::Config(
            "precision sweeps demote kernels of the double variant; run single/mixed separately"
                .into(),
        ));
    }
    if kernels.is_empty() || t_values.is_empty() {
        return Err(Error::Config("sweep needs at least one kernel and one t".into()));
    }
    let mut ctx = Context::ieee();
    let b = init_rhs(mesh, &mut ctx);

    let mut rows: Vec<SweepRow> = t_values
        .par_iter()
        .map(|&t| {
            let fmt = VprecFormat::new(t, r)?;
            let mut scope = ScopeMap::ieee();
            for &k in kernels {
                scope = scope.with_kernel(k, Backend::Vprec(fmt));
            }
            let mut ctx = Context::new(scope, 0);
            let row = match solve_with_rhs(mesh, &b, cg, &mut ctx) {
                Ok(out) => SweepRow {
                    t,
                    converged: out.converged,
                    iterations: out.iterations,
                    final_residual: out.final_residual,
                    true_residual: true_residual(mesh, &b, &out.solution.to_f64()),
                    defect: None,
                },
                Err(e) if e.is_solver_defect() => SweepRow {
                    t,
                    converged: false,
                    iterations: 0,
                    final_residual: f64::NAN,
                    true_residual: f64::NAN,
                    defect: Some(match e {
                        Error::IndefiniteOperator { .. } => "indefinite",
                        _ => "nan",
                    }),
                },
                Err(e) => return Err(e),
            };
            Ok(row)
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.t);
    let plateau = plateau_onset(&rows, cg.tol);
    Ok(SweepOutcome { rows, plateau_onset: plateau })
}

/// CSV rendering of the sweep rows.
pub fn sweep_csv(outcome: &SweepOutcome, fingerprint: u64) -> String {
    let mut s = csv_header(
        fingerprint,
        "t,converged,iterations,final_residual,true_residual,defect",
    );
    for r in &outcome.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.converged,
            r.iterations,
            fmt_f64(r.final_residual),
            fmt_f64(r.true_residual),
            r.defect.unwrap_or(""),
        ));
    }
    s
}
