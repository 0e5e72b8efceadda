//! Wall-clock and accuracy comparison between the binary64 solve and a
//! reduced-storage variant, on the native (uninstrumented-dispatch) paths.
//!
//! Timing numbers are medians of repeated runs on the monotonic clock and
//! are *reported, not asserted*: they depend on the host. The byte and flop
//! ratios come from the op counters and are machine-independent.

use std::time::Instant;

use serde::Serialize;

use crate::cg::{
    accuracy_metrics, init_rhs, relative_gain, solve_native, AccuracyMetrics, CgConfig, Variant,
};
use crate::context::{Context, OpCounters};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariantTiming {
    /// Median seconds for right-hand-side build plus solve.
    pub whole_s: f64,
    /// Median seconds for the solve alone, right-hand side prebuilt.
    pub solve_s: f64,
    pub iterations: u32,
    pub converged: bool,
    pub final_residual: f64,
    pub bytes: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutcome {
    pub variant: Variant,
    pub runs: u32,
    pub double: VariantTiming,
    pub reduced: VariantTiming,
    /// Fractional runtime improvement, (t64 - t) / t64.
    pub whole_gain: f64,
    pub solve_gain: f64,
    /// Deviation of the reduced solution from the binary64 one.
    pub accuracy: AccuracyMetrics,
    /// reduced bytes / binary64 bytes; near 0.5 when iteration counts match.
    pub byte_ratio: f64,
    pub flop_ratio: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    xs[xs.len() / 2]
}

fn time_variant(
    mesh: &Mesh,
    cg: &CgConfig,
    b: &[f64],
    runs: u32,
) -> Result<(VariantTiming, crate::cg::SolveOutput)> {
    // One instrumented run for counters and results, outside the timed reps.
    let mut counters = OpCounters::new();
    let out = solve_native(mesh, b, cg, &mut counters)?;
    let total = counters.total();

    let mut whole = Vec::with_capacity(runs as usize);
    let mut solve_only = Vec::with_capacity(runs as usize);
    for _ in 0..runs {
        let mut scratch = OpCounters::new();
        let t0 = Instant::now();
        let mut ctx = Context::ieee();
        let bb = init_rhs(mesh, &mut ctx);
        solve_native(mesh, &bb, cg, &mut scratch)?;
        whole.push(t0.elapsed().as_secs_f64());

        let mut scratch = OpCounters::new();
        let t1 = Instant::now();
        solve_native(mesh, b, cg, &mut scratch)?;
        solve_only.push(t1.elapsed().as_secs_f64());
    }
    Ok((
        VariantTiming {
            whole_s: median(whole),
            solve_s: median(solve_only),
            iterations: out.iterations,
            converged: out.converged,
            final_residual: out.final_residual,
            bytes: total.bytes(),
            flops: total.flops(),
        },
        out,
    ))
}

/// Compare `variant` against the binary64 solve on the same system.
pub fn compare(mesh: &Mesh, cg: &CgConfig, variant: Variant, runs: u32) -> Result<CompareOutcome> {
    if variant == Variant::Double {
        return Err(Error::Config(
            "comparing double against itself says nothing; pick single or mixed".into(),
        ));
    }
    if runs == 0 {
        return Err(Error::Config("comparison needs at least one timed run".into()));
    }
    let mut ctx = Context::ieee();
    let b = init_rhs(mesh, &mut ctx);

    let cfg64 = CgConfig { variant: Variant::Double, ..*cg };
    let cfg_r = CgConfig { variant, ..*cg };
    let (t64, out64) = time_variant(mesh, &cfg64, &b, runs)?;
    let (tr, outr) = time_variant(mesh, &cfg_r, &b, runs)?;

    let accuracy = accuracy_metrics(&outr.solution.to_f64(), &out64.solution.to_f64())?;
    Ok(CompareOutcome {
        variant,
        runs,
        whole_gain: relative_gain(t64.whole_s, tr.whole_s),
        solve_gain: relative_gain(t64.solve_s, tr.solve_s),
        accuracy,
        byte_ratio: tr.bytes as f64 / t64.bytes as f64,
        flop_ratio: tr.flops as f64 / t64.flops as f64,
        double: t64,
        reduced: tr,
    })
}
