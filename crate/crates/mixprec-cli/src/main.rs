//! Command-line driver: solve, sweep, ensemble, roofline, screening
//! pipeline, and timed variant comparison, with reproducible file outputs.
//!
//! Exit codes: 0 success, 2 configuration or i/o problem, 3 solver defect
//! (indefinite operator or NaN residual under an emulation backend).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mixprec::cg::{
    init_rhs, solve_with_rhs, true_residual, CgConfig, Solution, Variant, CG_KERNELS,
};
use mixprec::context::{Backend, Context, KernelId, ScopeMap};
use mixprec::error::{Error, Result};
use mixprec::field::{export_field, FieldValues};
use mixprec::fpemu::VprecFormat;
use mixprec::harness::compare::compare;
use mixprec::harness::ensemble::{ensemble_csv, mca_ensemble};
use mixprec::harness::output::{config_fingerprint, counters_csv, trace_csv};
use mixprec::harness::pipeline::{run_pipeline, PipelineConfig, Section, Thresholds};
use mixprec::harness::sweep::{sweep_csv, sweep_vprec};
use mixprec::mca::{McaConfig, McaMode};
use mixprec::mesh::{Mesh, MeshSpec};
use mixprec::roofline::{arithmetic_intensity, Bound, ComputeClass, MachineModel};

#[derive(Parser)]
#[command(name = "mixprec", version, about = "Precision screening for a spectral-element CG solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one conjugate-gradient solve, optionally under an emulation scope
    Solve(SolveCmd),
    /// Rerun the solve across mantissa widths and locate the accuracy plateau
    SweepVprec(SweepCmd),
    /// Ensemble of solves under stochastic rounding noise
    McaEnsemble(EnsembleCmd),
    /// Arithmetic intensity and predicted demotion gain per kernel
    Roofline(RooflineCmd),
    /// Screen code sections for demotion: speedup, accuracy, noise gates
    Pipeline(PipelineCmd),
    /// Time a reduced-storage variant against the binary64 baseline
    Compare(CompareCmd),
}

#[derive(Args)]
struct MeshOpt {
    /// Mesh as EX,EY,EZ,NX1 (elements per axis, nodes per edge)
    #[arg(long, default_value = "2,2,2,8", value_parser = parse_mesh)]
    mesh: MeshSpec,
}

#[derive(Args)]
struct CgOpts {
    /// Absolute residual tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 1000)]
    miter: u32,
    /// Preconditioner: none | jacobi
    #[arg(long, default_value = "none")]
    precond: String,
}

impl CgOpts {
    fn config(&self, variant: Variant) -> Result<CgConfig> {
        Ok(CgConfig {
            tol: self.tol,
            miter: self.miter,
            variant,
            precond: self.precond.parse()?,
        })
    }
}

#[derive(Args)]
struct SolveCmd {
    #[command(flatten)]
    mesh: MeshOpt,
    #[command(flatten)]
    cg: CgOpts,
    /// Storage variant: double | single | mixed
    #[arg(long, default_value = "double")]
    variant: String,
    /// Backend for all seven loop kernels:
    /// ieee | vprec:t<T>r<R> | mca:<rr|full>:t<T>[:seed<N>]
    #[arg(long, conflicts_with = "scope")]
    backend: Option<String>,
    /// JSON scope file: {"default": SPEC, "kernels": {NAME: SPEC},
    /// "include": [...], "exclude": [...]}
    #[arg(long)]
    scope: Option<PathBuf>,
    /// Noise stream index for ensemble-style reruns
    #[arg(long, default_value_t = 0)]
    instance: u64,
    /// Directory for run_config.json, trace.csv, counters.csv,
    /// summary.json, and the x.f64 field dump
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    mesh: MeshOpt,
    #[command(flatten)]
    cg: CgOpts,
    /// Smallest mantissa width
    #[arg(long, default_value_t = 3)]
    t_min: u32,
    /// Largest mantissa width
    #[arg(long, default_value_t = 52)]
    t_max: u32,
    /// Exponent field width for every row
    #[arg(long, default_value_t = 11)]
    r: u32,
    /// Kernels to demote (comma-separated; default: the whole loop)
    #[arg(long, value_delimiter = ',')]
    kernels: Vec<String>,
    /// Directory for sweep.csv and summary.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleCmd {
    #[command(flatten)]
    mesh: MeshOpt,
    #[command(flatten)]
    cg: CgOpts,
    /// Noise mode: rr (results only) | full (inputs too)
    #[arg(long, default_value = "rr")]
    mode: String,
    /// Virtual mantissa width of the noise
    #[arg(long, default_value_t = 23)]
    t: u32,
    /// Base seed; runs use independent streams of it
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Ensemble size
    #[arg(long, default_value_t = 20)]
    runs: u32,
    /// Kernels to perturb (comma-separated; default: the whole loop)
    #[arg(long, value_delimiter = ',')]
    kernels: Vec<String>,
    /// Directory for ensemble.csv and summary.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RooflineCmd {
    /// Machine model JSON; the bundled two-socket server when omitted
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Evaluate these intensities (flops/byte) instead of solving
    #[arg(long, value_delimiter = ',')]
    ai: Vec<f64>,
    #[command(flatten)]
    mesh: MeshOpt,
    #[command(flatten)]
    cg: CgOpts,
    /// File for the JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineCmd {
    #[command(flatten)]
    mesh: MeshOpt,
    /// Screening tolerance: what the demoted loop must actually deliver.
    /// Kept coarser than the production 1e-10 because a binary32 loop
    /// cannot certify below ~1e-7.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    miter: u32,
    /// Ensemble size for the noise gate
    #[arg(long, default_value_t = 20)]
    runs: u32,
    /// Virtual mantissa width for the noise gate
    #[arg(long, default_value_t = 23)]
    t: u32,
    /// Demotion format for the accuracy gate
    #[arg(long, default_value = "t23r8")]
    vprec: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Machine model JSON; bundled model when omitted
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Minimum predicted speedup (gate 1)
    #[arg(long, default_value_t = 1.2)]
    min_speedup: f64,
    /// Maximum demotion penalty (gate 2): true residual over tol for the
    /// solver, relative output discrepancy for the probe
    #[arg(long, default_value_t = 10.0)]
    max_vprec_error: f64,
    /// Minimum shared bits across the noise ensemble (gate 3)
    #[arg(long, default_value_t = 10.0)]
    min_s2_bits: f64,
    /// Measure every gate even after a prune
    #[arg(long)]
    exhaustive: bool,
    /// File for the JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCmd {
    #[command(flatten)]
    mesh: MeshOpt,
    #[command(flatten)]
    cg: CgOpts,
    /// Variant to time against double: single | mixed
    #[arg(long, default_value = "single")]
    variant: String,
    /// Timing repetitions (median is reported)
    #[arg(long, default_value_t = 5)]
    runs: u32,
    /// File for the JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mesh(s: &str) -> std::result::Result<MeshSpec, String> {
    s.parse::<MeshSpec>().map_err(|e| e.to_string())
}

/// Kernel list from `--kernels`, defaulting to the loop set.
fn kernel_list(names: &[String]) -> Result<Vec<KernelId>> {
    if names.is_empty() {
        return Ok(CG_KERNELS.to_vec());
    }
    names
        .iter()
        .map(|n| {
            KernelId::parse(n)
                .ok_or_else(|| Error::ScopeConfig(format!("unknown kernel `{n}`")))
        })
        .collect()
}

/// Scope from --scope / --backend. A scope file may only mention known
/// kernel names.
fn build_scope(backend: &Option<String>, scope: &Option<PathBuf>) -> Result<ScopeMap> {
    if let Some(path) = scope {
        let text = fs::read_to_string(path)?;
        let map = ScopeMap::from_json(&text)?;
        for name in map.mentioned_kernels() {
            if KernelId::parse(name).is_none() {
                return Err(Error::ScopeConfig(format!("unknown kernel `{name}`")));
            }
        }
        return Ok(map);
    }
    let mut map = ScopeMap::ieee();
    if let Some(spec) = backend {
        let b: Backend = spec.parse()?;
        for k in CG_KERNELS {
            map = map.with_kernel(k, b);
        }
    }
    Ok(map)
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct RunConfig {
    mesh: MeshSpec,
    cg: CgConfig,
    /// Resolved backend per kernel, after include/exclude filtering.
    backends: BTreeMap<&'static str, String>,
    instance: u64,
}

#[derive(Serialize)]
struct SolveSummary {
    config: String,
    converged: bool,
    iterations: u32,
    final_residual: f64,
    true_residual: f64,
    /// Bytes per stored solution value (8 unless the variant demotes storage).
    storage_bytes: u32,
    wall_seconds: f64,
}

fn cmd_solve(cmd: &SolveCmd) -> Result<()> {
    let cfg = cmd.cg.config(cmd.variant.parse()?)?;
    let scope = build_scope(&cmd.backend, &cmd.scope)?;
    let run_config = RunConfig {
        mesh: cmd.mesh.mesh,
        cg: cfg.clone(),
        backends: KernelId::ALL
            .iter()
            .map(|k| (k.name(), scope.resolve(k.name()).to_string()))
            .collect(),
        instance: cmd.instance,
    };
    let fingerprint = config_fingerprint(&run_config)?;

    let mesh = Mesh::build(cmd.mesh.mesh)?;
    let mut ctx = Context::new(scope, cmd.instance);
    let t0 = Instant::now();
    let b = init_rhs(&mesh, &mut ctx);
    let out = solve_with_rhs(&mesh, &b, &cfg, &mut ctx)?;
    let wall = t0.elapsed().as_secs_f64();

    let summary = SolveSummary {
        config: format!("{fingerprint:016x}"),
        converged: out.converged,
        iterations: out.iterations,
        final_residual: out.final_residual,
        true_residual: true_residual(&mesh, &b, &out.solution.to_f64()),
        storage_bytes: out.solution.width(),
        wall_seconds: wall,
    };
    println!(
        "{} in {} iterations: residual {:e} (true {:e}), {:.3}s",
        if out.converged { "converged" } else { "NOT converged" },
        out.iterations,
        out.final_residual,
        summary.true_residual,
        wall
    );

    if let Some(dir) = &cmd.out {
        out_dir(dir)?;
        write_json(&dir.join("run_config.json"), &run_config)?;
        write_json(&dir.join("summary.json"), &summary)?;
        fs::write(dir.join("trace.csv"), trace_csv(&out.trace, fingerprint))?;
        fs::write(dir.join("counters.csv"), counters_csv(&ctx.counters, fingerprint))?;
        let values = match &out.solution {
            Solution::F64(v) => FieldValues::F64(v),
            Solution::F32(v) => FieldValues::F32(v),
        };
        export_field(&dir.join("x.f64"), values, &mesh.spec)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_sweep(cmd: &SweepCmd) -> Result<()> {
    if cmd.t_min > cmd.t_max {
        return Err(Error::Config(format!(
            "empty sweep: t_min {} > t_max {}",
            cmd.t_min, cmd.t_max
        )));
    }
    let cfg = cmd.cg.config(Variant::Double)?;
    let kernels = kernel_list(&cmd.kernels)?;
    let mesh = Mesh::build(cmd.mesh.mesh)?;
    let ts: Vec<u32> = (cmd.t_min..=cmd.t_max).collect();
    let outcome = sweep_vprec(&mesh, &cfg, &kernels, &ts, cmd.r)?;
    let fingerprint = config_fingerprint(&(&cmd.mesh.mesh, &cfg, &kernels, &ts, cmd.r))?;

    for row in &outcome.rows {
        println!(
            "t={:2} {} iters={:4} residual={:e} true={:e}{}",
            row.t,
            if row.converged { "ok  " } else { "FAIL" },
            row.iterations,
            row.final_residual,
            row.true_residual,
            row.defect.map(|d| format!(" [{d}]")).unwrap_or_default()
        );
    }
    match outcome.plateau_onset {
        Some(t) => println!("accuracy plateau from t = {t}"),
        None => println!("no plateau: reference row (t = 52) absent or failed"),
    }

    if let Some(dir) = &cmd.out {
        out_dir(dir)?;
        fs::write(dir.join("sweep.csv"), sweep_csv(&outcome, fingerprint))?;
        write_json(
            &dir.join("summary.json"),
            &serde_json::json!({
                "config": format!("{fingerprint:016x}"),
                "rows": outcome.rows.len(),
                "plateau_onset": outcome.plateau_onset,
            }),
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_ensemble(cmd: &EnsembleCmd) -> Result<()> {
    let cfg = cmd.cg.config(Variant::Double)?;
    let kernels = kernel_list(&cmd.kernels)?;
    let mode: McaMode = cmd.mode.parse()?;
    let mca = McaConfig::new(mode, cmd.t, cmd.seed)?;
    let mut scope = ScopeMap::ieee();
    for &k in &kernels {
        scope = scope.with_kernel(k, Backend::Mca(mca));
    }
    let mesh = Mesh::build(cmd.mesh.mesh)?;
    let outcome = mca_ensemble(&mesh, &cfg, &scope, cmd.runs)?;
    let fingerprint =
        config_fingerprint(&(&cmd.mesh.mesh, &cfg, &kernels, &cmd.mode, cmd.t, cmd.seed))?;

    let longest = outcome.runs.iter().map(|r| r.iterations).max().unwrap_or(0);
    println!(
        "{} runs, all converged: {}; longest {} iterations; solution keeps {:.2} bits",
        outcome.runs.len(),
        outcome.all_converged,
        longest,
        outcome.final_s2
    );
    if let Some(dir) = &cmd.out {
        out_dir(dir)?;
        fs::write(dir.join("ensemble.csv"), ensemble_csv(&outcome, fingerprint))?;
        write_json(
            &dir.join("summary.json"),
            &serde_json::json!({
                "config": format!("{fingerprint:016x}"),
                "all_converged": outcome.all_converged,
                "final_s2": outcome.final_s2,
                "probe_index": outcome.probe_index,
                "longest_run": longest,
            }),
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn load_machine(path: &Option<PathBuf>) -> Result<MachineModel> {
    match path {
        Some(p) => MachineModel::from_json(&fs::read_to_string(p)?),
        None => Ok(MachineModel::bundled()),
    }
}

#[derive(Serialize)]
struct RooflineRow {
    kernel: Option<&'static str>,
    ai: f64,
    attainable_dp: f64,
    attainable_sp: f64,
    bound_dp: Bound,
    predicted_gain: f64,
}

fn roofline_row(model: &MachineModel, kernel: Option<&'static str>, ai: f64) -> Result<RooflineRow> {
    let (dp, bound_dp) = model.classify(ComputeClass::DpVector, ai)?;
    let sp = model.attainable(ComputeClass::SpVector, 2.0 * ai)?;
    Ok(RooflineRow {
        kernel,
        ai,
        attainable_dp: dp,
        attainable_sp: sp,
        bound_dp,
        predicted_gain: model.predict_precision_gain(ai)?,
    })
}

fn cmd_roofline(cmd: &RooflineCmd) -> Result<()> {
    let model = load_machine(&cmd.machine)?;
    let mut rows = Vec::new();
    if cmd.ai.is_empty() {
        // measure a plain solve and tabulate its kernels
        let cfg = cmd.cg.config(Variant::Double)?;
        let mesh = Mesh::build(cmd.mesh.mesh)?;
        let mut ctx = Context::ieee();
        let b = init_rhs(&mesh, &mut ctx);
        solve_with_rhs(&mesh, &b, &cfg, &mut ctx)?;
        for k in KernelId::ALL {
            let c = ctx.counters.get(k);
            if let Ok(ai) = arithmetic_intensity(c) {
                rows.push(roofline_row(&model, Some(k.name()), ai)?);
            }
        }
    } else {
        for &ai in &cmd.ai {
            rows.push(roofline_row(&model, None, ai)?);
        }
    }
    for r in &rows {
        println!(
            "{:>12} ai={:.4} dp={:6.2} GF/s ({:?}-bound) sp={:6.2} GF/s gain={:.4}",
            r.kernel.unwrap_or("-"),
            r.ai,
            r.attainable_dp,
            r.bound_dp,
            r.attainable_sp,
            r.predicted_gain
        );
    }
    if let Some(path) = &cmd.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        write_json(path, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_pipeline(cmd: &PipelineCmd) -> Result<()> {
    let cg = CgConfig {
        tol: cmd.tol,
        miter: cmd.miter,
        ..CgConfig::default()
    };
    let mut pc = PipelineConfig::new(cg, cmd.seed);
    pc.runs = cmd.runs;
    pc.mca_t = cmd.t;
    pc.vprec = cmd.vprec.parse::<VprecFormat>()?;
    pc.thresholds = Thresholds {
        min_speedup: cmd.min_speedup,
        max_vprec_error: cmd.max_vprec_error,
        min_s2_bits: cmd.min_s2_bits,
    };
    let model = load_machine(&cmd.machine)?;
    let mesh = Mesh::build(cmd.mesh.mesh)?;
    let sections = Section::default_set();
    let outcome = run_pipeline(&mesh, &sections, &model, &pc, cmd.exhaustive)?;

    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
    for s in &outcome.sections {
        println!(
            "{:<20} speedup={:.4} penalty={} noise_s2={} -> {}",
            s.name,
            s.speedup,
            fmt_opt(s.vprec_error),
            fmt_opt(s.mca_final_s2),
            s.verdict.name()
        );
    }
    if let Some(path) = &cmd.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        write_json(path, &serde_json::json!({ "config": pc, "sections": outcome.sections }))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_compare(cmd: &CompareCmd) -> Result<()> {
    let cfg = cmd.cg.config(Variant::Double)?;
    let variant: Variant = cmd.variant.parse()?;
    let mesh = Mesh::build(cmd.mesh.mesh)?;
    let outcome = compare(&mesh, &cfg, variant, cmd.runs)?;
    println!(
        "{:?} vs double over {} runs: whole {:+.1}% solve {:+.1}%",
        outcome.variant,
        outcome.runs,
        100.0 * outcome.whole_gain,
        100.0 * outcome.solve_gain
    );
    println!(
        "bytes x{:.3}, flops x{:.3}, |dx| max {:.3e} mean {:.3e}, iterations {} vs {}",
        outcome.byte_ratio,
        outcome.flop_ratio,
        outcome.accuracy.max_abs,
        outcome.accuracy.mean_abs,
        outcome.reduced.iterations,
        outcome.double.iterations
    );
    if let Some(path) = &cmd.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        write_json(path, &outcome)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::SweepVprec(c) => cmd_sweep(c),
        Command::McaEnsemble(c) => cmd_ensemble(c),
        Command::Roofline(c) => cmd_roofline(c),
        Command::Pipeline(c) => cmd_pipeline(c),
        Command::Compare(c) => cmd_compare(c),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_solver_defect() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
