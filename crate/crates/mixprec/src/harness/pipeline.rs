//! Demotion screening: decide, per code section, whether moving it to
//! binary32 is worth attempting.
//!
//! A section is a named group of kernels plus the workload that exercises
//! them. Screening runs three gates in order:
//!
//! 1. speedup — roofline-predicted gain from halving the storage width must
//!    clear a threshold, otherwise the change can't pay for itself;
//! 2. demotion penalty — rerunning with the section's kernels rounded to
//!    binary32-shaped values must leave the workload's result within budget.
//!    The penalty is dimensionless: for the solver it is the true residual of
//!    the demoted iterate over the stopping tolerance (so a run whose
//!    recursive residual claims convergence the iterate doesn't have scores
//!    in the thousands, not near 1), for the probe the relative output
//!    discrepancy;
//! 3. noise robustness — an ensemble under stochastic rounding at the same
//!    mantissa width must converge every time and keep enough significant
//!    bits, otherwise the binary32 agreement was luck, not headroom.
//!
//! Gate 2 alone is one rounding draw; gate 3 is the statistical check that
//! the section isn't sitting on a cancellation cliff. The bundled
//! cancellation probe is the canonical example of a section that sails
//! through gate 2 (bit-exact at binary32) and fails gate 3.
//!
//! The screening tolerance should be one the demoted width can actually
//! certify: a binary32 loop bottoms out near 1e-7 true residual on
//! well-conditioned systems, so screening against tol = 1e-10 prunes every
//! solver section at gate 2 no matter how noise-robust it is. 1e-4 is a
//! sensible screening default.

use serde::Serialize;

use crate::cg::{init_rhs, solve_with_rhs, true_residual, CgConfig, CG_KERNELS};
use crate::context::{Backend, Context, Exec, KernelCounters, KernelId, Scoped, ScopeMap};
use crate::error::{Error, Result};
use crate::fpemu::VprecFormat;
use crate::harness::ensemble::mca_ensemble;
use crate::mca::{McaConfig, McaMode};
use crate::mesh::Mesh;
use crate::num::{FpOp, Real};
use crate::roofline::{arithmetic_intensity, MachineModel};
use crate::stats::significant_bits;

/// What a section's kernels get exercised by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    /// Full conjugate-gradient solve; gate 2 judges it by the true residual
    /// of the returned iterate, recomputed in binary64.
    CgSolve,
    /// Synthetic cancellation kernel (see [`cancel_probe`]); gate 2 judges it
    /// by the relative discrepancy of the output scalar.
    CancelProbe,
}

/// A named group of kernels screened as one unit.
#[derive(Debug, Clone, Serialize)]
pub struct Section {
    pub name: String,
    pub kernels: Vec<KernelId>,
    pub workload: Workload,
}

impl Section {
    pub fn new(name: &str, kernels: &[KernelId], workload: Workload) -> Self {
        Section {
            name: name.to_string(),
            kernels: kernels.to_vec(),
            workload,
        }
    }

    /// The stock screening set: the whole solver loop as one section, plus
    /// the cancellation probe as the built-in negative control.
    pub fn default_set() -> Vec<Section> {
        vec![
            Section::new("cg_loop", &CG_KERNELS, Workload::CgSolve),
            Section::new(
                "cancellation_probe",
                &[KernelId::CancelProbe],
                Workload::CancelProbe,
            ),
        ]
    }
}

/// Gate thresholds. Defaults: a demotion must promise at least 1.2x, keep
/// the dimensionless demotion penalty within 10 (a solver iterate no worse
/// than 10x the asked tolerance), and retain 10 significant bits under noise.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    pub min_speedup: f64,
    pub max_vprec_error: f64,
    pub min_s2_bits: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_speedup: 1.2,
            max_vprec_error: 10.0,
            min_s2_bits: 10.0,
        }
    }
}

/// Everything the three gates need beyond the mesh and machine model.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub cg: CgConfig,
    pub thresholds: Thresholds,
    /// Ensemble size for gate 3.
    pub runs: u32,
    /// Demotion format for gate 2.
    pub vprec: VprecFormat,
    /// Mantissa width for gate 3's noise.
    pub mca_t: u32,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(cg: CgConfig, seed: u64) -> Self {
        PipelineConfig {
            cg,
            thresholds: Thresholds::default(),
            runs: 20,
            vprec: VprecFormat::BINARY32,
            mca_t: 23,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Passed every gate; worth handing to a human.
    Candidate,
    /// Halving the width wouldn't pay.
    PrunedSpeedup,
    /// One binary32-shaped rerun already broke the result.
    PrunedVprec,
    /// Survived one rerun but not the noise ensemble.
    PrunedMca,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Candidate => "candidate",
            Verdict::PrunedSpeedup => "pruned-speedup",
            Verdict::PrunedVprec => "pruned-vprec",
            Verdict::PrunedMca => "pruned-mca",
        }
    }
}

/// All three gate measurements for one section, no thresholds applied.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SectionMeasurements {
    pub speedup: f64,
    pub vprec_error: f64,
    pub mca_all_converged: bool,
    pub mca_final_s2: f64,
}

/// Pure verdict function: applies thresholds to measurements in gate order.
pub fn verdict_from(m: &SectionMeasurements, th: &Thresholds) -> Verdict {
    if !(m.speedup >= th.min_speedup) {
        return Verdict::PrunedSpeedup;
    }
    if !(m.vprec_error <= th.max_vprec_error) {
        return Verdict::PrunedVprec;
    }
    if !m.mca_all_converged || !(m.mca_final_s2 >= th.min_s2_bits) {
        return Verdict::PrunedMca;
    }
    Verdict::Candidate
}

// --- the cancellation probe -------------------------------------------------

const PROBE_BIG: f64 = 1048576.0; // 2^20
const PROBE_X: f64 = 0.125; // 2^-3
const PROBE_N: usize = 256;

/// Averages `((big + x) - big) / x` over 256 samples. Every step is exact in
/// both binary64 and binary32 (big + x spans exactly 24 mantissa bits), so
/// the probe returns 1.0 under ieee and under binary32-shaped rounding — but
/// each sample loses most of its bits to cancellation the moment the sum is
/// perturbed below the last place, which is precisely what stochastic
/// rounding does.
///
/// The probe stands in for a streaming pass: per sample it declares two
/// operand reads and one result write at the executor's storage width.
pub fn cancel_probe<X: Exec>(ex: &mut X) -> f64 {
    const K: KernelId = KernelId::CancelProbe;
    ex.record_call(K);
    let big = X::Num::from_f64(PROBE_BIG);
    let x = X::Num::from_f64(PROBE_X);
    let mut acc = X::Num::from_f64(0.0);
    for _ in 0..PROBE_N {
        let s = ex.op(K, FpOp::Add, big, x);
        let d = ex.op(K, FpOp::Sub, s, big);
        let r = ex.op(K, FpOp::Div, d, x);
        acc = ex.op(K, FpOp::Add, acc, r);
    }
    let out = ex.op(K, FpOp::Div, acc, X::Num::from_f64(PROBE_N as f64));
    let w = X::width();
    ex.traffic(K, (PROBE_N as u64) * 2 * w, (PROBE_N as u64) * w);
    out.to_f64()
}

// --- gates -------------------------------------------------------------------

fn section_scope(section: &Section, backend: Backend) -> ScopeMap {
    let mut scope = ScopeMap::ieee();
    for &k in &section.kernels {
        scope = scope.with_kernel(k, backend);
    }
    scope
}

/// The screening right-hand side, built once in plain binary64 so every gate
/// and every section solves the identical system.
fn standard_rhs(mesh: &Mesh) -> Vec<f64> {
    let mut ctx = Context::ieee();
    init_rhs(mesh, &mut ctx)
}

/// Gate 1: roofline-predicted gain for the section's aggregate intensity,
/// measured from an instrumented ieee run of the workload.
pub fn stage_speedup(
    mesh: &Mesh,
    cg: &CgConfig,
    section: &Section,
    model: &MachineModel,
) -> Result<f64> {
    let mut ctx = Context::ieee();
    match section.workload {
        Workload::CgSolve => {
            let b = standard_rhs(mesh);
            solve_with_rhs(mesh, &b, cg, &mut ctx)?;
        }
        Workload::CancelProbe => {
            let mut ex = Scoped::new(&mut ctx);
            cancel_probe(&mut ex);
        }
    }
    let mut agg = KernelCounters::default();
    for &k in &section.kernels {
        agg.merge(ctx.counters.get(k));
    }
    let ai = arithmetic_intensity(&agg).map_err(|e| {
        Error::Config(format!(
            "section `{}` recorded no usable work for its kernels: {e}",
            section.name
        ))
    })?;
    model.predict_precision_gain(ai)
}

/// Gate 2: dimensionless demotion penalty. For the solver, the true residual
/// of the demoted run's iterate divided by the stopping tolerance — judging
/// the iterate, not the recursive residual, so low-t runs whose recursion
/// claims convergence the iterate doesn't have score far above 1. For the
/// probe, the relative discrepancy against a plain run. Infinite when the
/// demoted run stalls or aborts.
pub fn stage_vprec(
    mesh: &Mesh,
    cg: &CgConfig,
    section: &Section,
    fmt: VprecFormat,
) -> Result<f64> {
    let scope = section_scope(section, Backend::Vprec(fmt));
    match section.workload {
        Workload::CgSolve => {
            let b = standard_rhs(mesh);
            let mut ieee_ctx = Context::ieee();
            let reference = solve_with_rhs(mesh, &b, cg, &mut ieee_ctx)?;
            if !reference.converged {
                return Err(Error::Config(
                    "screening tolerance unreachable even in binary64; nothing to screen".into(),
                ));
            }
            let mut ctx = Context::new(scope, 0);
            match solve_with_rhs(mesh, &b, cg, &mut ctx) {
                Ok(out) if out.converged => {
                    Ok(true_residual(mesh, &b, &out.solution.to_f64()) / cg.tol)
                }
                Ok(_) => Ok(f64::INFINITY),
                Err(e) if e.is_solver_defect() => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        }
        Workload::CancelProbe => {
            let mut ieee_ctx = Context::ieee();
            let reference = cancel_probe(&mut Scoped::new(&mut ieee_ctx));
            let mut ctx = Context::new(scope, 0);
            let demoted = cancel_probe(&mut Scoped::new(&mut ctx));
            Ok((demoted - reference).abs() / reference.abs().max(f64::MIN_POSITIVE))
        }
    }
}

/// Gate 3: noise ensemble over the section. For the solver this is a full
/// [`mca_ensemble`]; for the probe, `runs` independent draws of its output.
pub fn stage_mca(
    mesh: &Mesh,
    cg: &CgConfig,
    section: &Section,
    runs: u32,
    t: u32,
    seed: u64,
) -> Result<(bool, f64)> {
    let mca = McaConfig::new(McaMode::Rr, t, seed)?;
    let scope = section_scope(section, Backend::Mca(mca));
    match section.workload {
        Workload::CgSolve => {
            let out = mca_ensemble(mesh, cg, &scope, runs)?;
            Ok((out.all_converged, out.final_s2))
        }
        Workload::CancelProbe => {
            let mut values = Vec::with_capacity(runs as usize);
            for k in 0..runs {
                let mut ctx = Context::new(scope.clone(), k as u64);
                let mut ex = Scoped::new(&mut ctx);
                values.push(cancel_probe(&mut ex));
            }
            let all_finite = values.iter().all(|v| v.is_finite());
            Ok((all_finite, significant_bits(&values)?))
        }
    }
}

/// Runs all three gates unconditionally and returns the raw measurements.
pub fn measure_section(
    mesh: &Mesh,
    section: &Section,
    model: &MachineModel,
    pc: &PipelineConfig,
) -> Result<SectionMeasurements> {
    let speedup = stage_speedup(mesh, &pc.cg, section, model)?;
    let vprec_error = stage_vprec(mesh, &pc.cg, section, pc.vprec)?;
    let (mca_all_converged, mca_final_s2) =
        stage_mca(mesh, &pc.cg, section, pc.runs, pc.mca_t, pc.seed)?;
    Ok(SectionMeasurements {
        speedup,
        vprec_error,
        mca_all_converged,
        mca_final_s2,
    })
}

/// One section's line in the report. Gates after the pruning one are None
/// when the pipeline ran in short-circuit mode.
#[derive(Debug, Clone, Serialize)]
pub struct SectionReport {
    pub name: String,
    pub workload: Workload,
    pub kernels: Vec<KernelId>,
    pub speedup: f64,
    pub vprec_error: Option<f64>,
    pub mca_all_converged: Option<bool>,
    pub mca_final_s2: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub sections: Vec<SectionReport>,
}

/// Screen each section. With `exhaustive` false, gates stop at the first
/// prune (the normal mode: pruned work is pruned, not re-measured); with it
/// true every gate runs so the report carries complete measurements.
pub fn run_pipeline(
    mesh: &Mesh,
    sections: &[Section],
    model: &MachineModel,
    pc: &PipelineConfig,
    exhaustive: bool,
) -> Result<PipelineOutcome> {
    let th = &pc.thresholds;
    let mut reports = Vec::with_capacity(sections.len());
    for section in sections {
        let speedup = stage_speedup(mesh, &pc.cg, section, model)?;
        let mut vprec_error = None;
        let mut mca_conv = None;
        let mut mca_s2 = None;
        let verdict = if speedup < th.min_speedup && !exhaustive {
            Verdict::PrunedSpeedup
        } else {
            let ve = stage_vprec(mesh, &pc.cg, section, pc.vprec)?;
            vprec_error = Some(ve);
            if (speedup < th.min_speedup || ve > th.max_vprec_error) && !exhaustive {
                if speedup < th.min_speedup {
                    Verdict::PrunedSpeedup
                } else {
                    Verdict::PrunedVprec
                }
            } else {
                let (conv, s2) = stage_mca(mesh, &pc.cg, section, pc.runs, pc.mca_t, pc.seed)?;
                mca_conv = Some(conv);
                mca_s2 = Some(s2);
                verdict_from(
                    &SectionMeasurements {
                        speedup,
                        vprec_error: ve,
                        mca_all_converged: conv,
                        mca_final_s2: s2,
                    },
                    th,
                )
            }
        };
        reports.push(SectionReport {
            name: section.name.clone(),
            workload: section.workload,
            kernels: section.kernels.clone(),
            speedup,
            vprec_error,
            mca_all_converged: mca_conv,
            mca_final_s2: mca_s2,
            verdict,
        });
    }
    Ok(PipelineOutcome { sections: reports })
}

/// True-residual spot check used by reports: how far the demoted solve's
/// iterate actually is from solving the system.
pub fn demoted_true_residual(
    mesh: &Mesh,
    cg: &CgConfig,
    section: &Section,
    fmt: VprecFormat,
) -> Result<Option<f64>> {
    let b = standard_rhs(mesh);
    let scope = section_scope(section, Backend::Vprec(fmt));
    let mut ctx = Context::new(scope, 0);
    match solve_with_rhs(mesh, &b, cg, &mut ctx) {
        Ok(out) => Ok(Some(true_residual(mesh, &b, &out.solution.to_f64()))),
        Err(e) if e.is_solver_defect() => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::Native;
    use crate::context::OpCounters;
    use crate::mesh::MeshSpec;

    fn probe_section() -> Section {
        Section::new(
            "probe",
            &[KernelId::CancelProbe],
            Workload::CancelProbe,
        )
    }

    fn small_mesh() -> Mesh {
        Mesh::build(MeshSpec::new(2, 2, 2, 3).unwrap()).unwrap()
    }

    #[test]
    fn probe_exact_under_ieee_and_native() {
        let mut ctx = Context::ieee();
        let mut ex = Scoped::new(&mut ctx);
        assert_eq!(cancel_probe(&mut ex), 1.0);
        let mut counters = OpCounters::new();
        let mut n32 = Native::<f32>::new(&mut counters);
        // exact in binary32 too: the sum spans exactly 24 mantissa bits
        assert_eq!(cancel_probe(&mut n32), 1.0);
        let c = counters.get(KernelId::CancelProbe);
        assert_eq!(c.flops_add, 3 * 256);
        assert_eq!(c.flops_div, 256 + 1);
        assert_eq!(c.bytes_read, 256 * 2 * 4);
        assert_eq!(c.bytes_written, 256 * 4);
        assert_eq!(c.calls, 1);
    }

    #[test]
    fn probe_measurements_and_verdict() {
        let mesh = small_mesh();
        let model = MachineModel::bundled();
        let pc = PipelineConfig::new(CgConfig::default(), 42);
        let m = measure_section(&mesh, &probe_section(), &model, &pc).unwrap();
        // Streaming intensity sits under the memory roofs, so the predicted
        // gain is the pure bandwidth ratio.
        assert_eq!(m.speedup, 2.0);
        // Bit-exact at binary32: one demotion draw sees nothing wrong.
        assert_eq!(m.vprec_error, 0.0);
        // Stochastic rounding exposes the cancellation: each sample keeps
        // O(1) relative noise, the 256-sample mean keeps a few bits only.
        assert!(m.mca_all_converged);
        assert!(
            m.mca_final_s2 > 2.0 && m.mca_final_s2 < 9.0,
            "probe s2 = {}",
            m.mca_final_s2
        );
        assert_eq!(
            verdict_from(&m, &Thresholds::default()),
            Verdict::PrunedMca
        );
    }

    #[test]
    fn verdict_ordering_and_monotonicity() {
        let th = Thresholds::default();
        let base = SectionMeasurements {
            speedup: 2.0,
            vprec_error: 0.0,
            mca_all_converged: true,
            mca_final_s2: 20.0,
        };
        assert_eq!(verdict_from(&base, &th), Verdict::Candidate);
        // Gate order: an earlier failure wins even if later gates also fail.
        let slow = SectionMeasurements { speedup: 1.0, ..base };
        assert_eq!(verdict_from(&slow, &th), Verdict::PrunedSpeedup);
        let slow_and_wrong = SectionMeasurements {
            speedup: 1.0,
            vprec_error: 1.0,
            ..base
        };
        assert_eq!(verdict_from(&slow_and_wrong, &th), Verdict::PrunedSpeedup);
        let wrong = SectionMeasurements { vprec_error: 1e3, ..base };
        assert_eq!(verdict_from(&wrong, &th), Verdict::PrunedVprec);
        let noisy = SectionMeasurements { mca_final_s2: 3.0, ..base };
        assert_eq!(verdict_from(&noisy, &th), Verdict::PrunedMca);
        let diverged = SectionMeasurements { mca_all_converged: false, ..base };
        assert_eq!(verdict_from(&diverged, &th), Verdict::PrunedMca);
        // NaN measurements must prune, never pass.
        let nan = SectionMeasurements { speedup: f64::NAN, ..base };
        assert_eq!(verdict_from(&nan, &th), Verdict::PrunedSpeedup);
        let nan2 = SectionMeasurements { vprec_error: f64::NAN, ..base };
        assert_eq!(verdict_from(&nan2, &th), Verdict::PrunedVprec);

        // Tightening any threshold never flips a prune into a candidate.
        let tighter = Thresholds {
            min_speedup: 3.0,
            max_vprec_error: 1e-3,
            min_s2_bits: 30.0,
        };
        for m in [base, slow, wrong, noisy] {
            let loose = verdict_from(&m, &th);
            let tight = verdict_from(&m, &tighter);
            if loose != Verdict::Candidate {
                assert_ne!(tight, Verdict::Candidate);
            }
        }
    }

    #[test]
    fn pipeline_short_circuits_but_exhaustive_measures_all() {
        let mesh = small_mesh();
        let model = MachineModel::bundled();
        let mut pc = PipelineConfig::new(CgConfig::default(), 42);
        pc.runs = 5; // keep the unit test quick
        // An impossible speedup bar prunes the probe at gate 1.
        pc.thresholds.min_speedup = 100.0;
        let lazy = run_pipeline(&mesh, &[probe_section()], &model, &pc, false).unwrap();
        let r = &lazy.sections[0];
        assert_eq!(r.verdict, Verdict::PrunedSpeedup);
        assert!(r.vprec_error.is_none() && r.mca_final_s2.is_none());
        let full = run_pipeline(&mesh, &[probe_section()], &model, &pc, true).unwrap();
        let r = &full.sections[0];
        assert_eq!(r.verdict, Verdict::PrunedSpeedup);
        assert_eq!(r.vprec_error, Some(0.0));
        assert!(r.mca_final_s2.is_some());
    }

    #[test]
    fn vprec_gate_scores_demotions_by_true_residual() {
        let mesh = small_mesh();
        let cg = CgConfig::default();
        // Direction-side kernels leave the residual recursion consistent
        // with the iterate, so the demoted run lands where it claims to.
        let direction = Section::new(
            "direction",
            &[KernelId::SolveM, KernelId::Add2s1],
            Workload::CgSolve,
        );
        let penalty = stage_vprec(&mesh, &cg, &direction, VprecFormat::BINARY32).unwrap();
        assert!(
            penalty <= 10.0,
            "direction demotion penalty {penalty} should be near 1"
        );
        // Residual-side kernels let the recursion drift from the iterate:
        // the recursive residual reports tol while the true residual sits
        // orders of magnitude higher. The gate must score the iterate.
        let residual_path = Section::new(
            "residual_path",
            &[KernelId::Glsc3, KernelId::Add2s2],
            Workload::CgSolve,
        );
        let penalty = stage_vprec(&mesh, &cg, &residual_path, VprecFormat::BINARY32).unwrap();
        assert!(
            penalty > 10.0,
            "residual-path demotion penalty {penalty} should expose the drift"
        );
    }
}
