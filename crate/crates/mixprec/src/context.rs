//! Scoped backend dispatch and operation accounting.
//!
//! Every floating-point operation of an instrumented kernel funnels through
//! [`scoped_op`], which resolves the kernel's backend (exact IEEE, reduced
//! precision, or stochastic noise), applies the operation, and counts it.
//! A [`ScopeMap`] decides per kernel which backend applies; resolution is
//! cached in the [`Context`] so the per-op cost is an array index.
//!
//! The same kernels also run on native f32/f64 storage for the performance
//! path. The [`Exec`] trait abstracts over the two: [`Scoped`] dispatches
//! through the context, [`Native`] applies operations directly and only
//! counts. Both count identically, so counter closed forms hold on either
//! path. Comparisons and sqrt are never routed through backends.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fpemu::{vprec_op, VprecFormat};
use crate::mca::{mca_op, McaConfig, McaMode, NoiseRng};
use crate::num::{FpOp, OpClass, Real};

/// Instrumentable kernels. The set is closed: these are the only names the
/// dispatch layer resolves, and configuration referencing anything else is
/// rejected up front by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelId {
    Mxm,
    Glsc3,
    Add2s1,
    Add2s2,
    Add2,
    Ax,
    SolveM,
    InitRhs,
    CancelProbe,
}

impl KernelId {
    pub const COUNT: usize = 9;
    pub const ALL: [KernelId; Self::COUNT] = [
        KernelId::Mxm,
        KernelId::Glsc3,
        KernelId::Add2s1,
        KernelId::Add2s2,
        KernelId::Add2,
        KernelId::Ax,
        KernelId::SolveM,
        KernelId::InitRhs,
        KernelId::CancelProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::Mxm => "mxm",
            KernelId::Glsc3 => "glsc3",
            KernelId::Add2s1 => "add2s1",
            KernelId::Add2s2 => "add2s2",
            KernelId::Add2 => "add2",
            KernelId::Ax => "ax",
            KernelId::SolveM => "solveM",
            KernelId::InitRhs => "init_rhs",
            KernelId::CancelProbe => "cancel_probe",
        }
    }

    pub fn parse(name: &str) -> Option<KernelId> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for KernelId {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for KernelId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        KernelId::parse(&s).ok_or_else(|| D::Error::custom(format!("unknown kernel `{s}`")))
    }
}

/// Arithmetic backend for one kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    /// Native binary64.
    Ieee,
    /// Outbound rounding into a reduced format.
    Vprec(VprecFormat),
    /// Stochastic noise at a virtual precision.
    Mca(McaConfig),
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Ieee => f.write_str("ieee"),
            Backend::Vprec(fmt) => write!(f, "vprec:{fmt}"),
            Backend::Mca(cfg) => {
                let mode = match cfg.mode {
                    McaMode::Rr => "rr",
                    McaMode::Full => "full",
                };
                write!(f, "mca:{mode}:t{}:seed{}", cfg.t, cfg.seed)
            }
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    /// Grammar: `ieee` | `vprec:t<t>r<r>` | `mca:<rr|full>:t<t>[:seed<n>]`.
    /// An omitted seed is 0.
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::BackendSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        if s == "ieee" {
            return Ok(Backend::Ieee);
        }
        if let Some(rest) = s.strip_prefix("vprec:") {
            return Ok(Backend::Vprec(rest.parse()?));
        }
        if let Some(rest) = s.strip_prefix("mca:") {
            let mut parts = rest.split(':');
            let mode: McaMode = parts.next().ok_or_else(|| err("missing mode"))?.parse()?;
            let tpart = parts.next().ok_or_else(|| err("missing t segment"))?;
            let t: u32 = tpart
                .strip_prefix('t')
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| err("t segment must look like t23"))?;
            let seed = match parts.next() {
                None => 0,
                Some(spart) => spart
                    .strip_prefix("seed")
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| err("seed segment must look like seed42"))?,
            };
            if parts.next().is_some() {
                return Err(err("trailing segments"));
            }
            return Ok(Backend::Mca(McaConfig::new(mode, t, seed)?));
        }
        Err(err("expected ieee, vprec:..., or mca:..."))
    }
}

impl Serialize for Backend {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Backend {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Per-kernel backend selection with include/exclude filtering.
///
/// Resolution order: an excluded kernel is always `Ieee`; a non-empty
/// include list restricts instrumentation to its members (everything else
/// resolves to `Ieee`, an empty list means no restriction); then the
/// per-kernel map applies, then the default. Unknown kernel names resolve
/// to the default.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScopeMap {
    default: Backend,
    kernels: BTreeMap<String, Backend>,
    include: BTreeSet<String>,
    exclude: BTreeSet<String>,
}

impl ScopeMap {
    /// Everything on the default backend.
    pub fn all(default: Backend) -> Self {
        ScopeMap {
            default,
            kernels: BTreeMap::new(),
            include: BTreeSet::new(),
            exclude: BTreeSet::new(),
        }
    }

    /// The uninstrumented scope: everything IEEE.
    pub fn ieee() -> Self {
        Self::all(Backend::Ieee)
    }

    pub fn with_kernel(mut self, kernel: KernelId, backend: Backend) -> Self {
        self.kernels.insert(kernel.name().to_string(), backend);
        self
    }

    pub fn with_include<I: IntoIterator<Item = KernelId>>(mut self, kernels: I) -> Self {
        self.include
            .extend(kernels.into_iter().map(|k| k.name().to_string()));
        self
    }

    pub fn with_exclude<I: IntoIterator<Item = KernelId>>(mut self, kernels: I) -> Self {
        self.exclude
            .extend(kernels.into_iter().map(|k| k.name().to_string()));
        self
    }

    pub fn resolve(&self, kernel: &str) -> &Backend {
        if self.exclude.contains(kernel) {
            return &Backend::Ieee;
        }
        if !self.include.is_empty() && !self.include.contains(kernel) {
            return &Backend::Ieee;
        }
        self.kernels.get(kernel).unwrap_or(&self.default)
    }

    /// Seed for the context noise stream: the first Mca backend in
    /// resolution surface order (default first, then the per-kernel map in
    /// name order). None when no Mca backend is configured.
    pub fn mca_seed(&self) -> Option<u64> {
        if let Backend::Mca(cfg) = &self.default {
            return Some(cfg.seed);
        }
        self.kernels.values().find_map(|b| match b {
            Backend::Mca(cfg) => Some(cfg.seed),
            _ => None,
        })
    }

    /// Kernel names mentioned anywhere in the map (for validation).
    pub fn mentioned_kernels(&self) -> impl Iterator<Item = &str> {
        self.kernels
            .keys()
            .map(String::as_str)
            .chain(self.include.iter().map(String::as_str))
            .chain(self.exclude.iter().map(String::as_str))
    }

    /// Parses the JSON scope file form:
    /// `{"default": "...", "kernels": {...}, "include": [...], "exclude": [...]}`.
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: ScopeFile =
            serde_json::from_str(json).map_err(|e| Error::ScopeConfig(e.to_string()))?;
        let mut map = ScopeMap::all(match raw.default {
            Some(s) => s.parse()?,
            None => Backend::Ieee,
        });
        for (name, spec) in raw.kernels {
            map.kernels.insert(name, spec.parse()?);
        }
        map.include.extend(raw.include);
        map.exclude.extend(raw.exclude);
        Ok(map)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScopeFile {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    kernels: BTreeMap<String, String>,
    #[serde(default)]
    include: Vec<String>,
    #[serde(default)]
    exclude: Vec<String>,
}

/// Counters for one kernel. `flops_fused` exists for completeness of the
/// class taxonomy; no kernel currently emits fused ops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KernelCounters {
    pub flops_add: u64,
    pub flops_mul: u64,
    pub flops_div: u64,
    pub flops_fused: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub calls: u64,
}

impl KernelCounters {
    pub fn flops(&self) -> u64 {
        self.flops_add + self.flops_mul + self.flops_div + self.flops_fused
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    pub fn merge(&mut self, other: &KernelCounters) {
        self.flops_add += other.flops_add;
        self.flops_mul += other.flops_mul;
        self.flops_div += other.flops_div;
        self.flops_fused += other.flops_fused;
        self.bytes_read += other.bytes_read;
        self.bytes_written += other.bytes_written;
        self.calls += other.calls;
    }

    pub fn is_zero(&self) -> bool {
        *self == KernelCounters::default()
    }
}

/// Per-kernel operation counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    per_kernel: [KernelCounters; KernelId::COUNT],
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, kernel: KernelId) -> &KernelCounters {
        &self.per_kernel[kernel as usize]
    }

    #[inline(always)]
    pub fn add_flop(&mut self, kernel: KernelId, class: OpClass) {
        let c = &mut self.per_kernel[kernel as usize];
        match class {
            OpClass::Add => c.flops_add += 1,
            OpClass::Mul => c.flops_mul += 1,
            OpClass::Div => c.flops_div += 1,
            OpClass::Fused => c.flops_fused += 1,
        }
    }

    #[inline(always)]
    pub fn charge_traffic(&mut self, kernel: KernelId, bytes_read: u64, bytes_written: u64) {
        let c = &mut self.per_kernel[kernel as usize];
        c.bytes_read += bytes_read;
        c.bytes_written += bytes_written;
    }

    #[inline(always)]
    pub fn record_call(&mut self, kernel: KernelId) {
        self.per_kernel[kernel as usize].calls += 1;
    }

    /// Sums another counter set into this one (ensemble aggregation).
    pub fn merge(&mut self, other: &OpCounters) {
        for (mine, theirs) in self.per_kernel.iter_mut().zip(&other.per_kernel) {
            mine.merge(theirs);
        }
    }

    /// Totals across kernels.
    pub fn total(&self) -> KernelCounters {
        let mut t = KernelCounters::default();
        for c in &self.per_kernel {
            t.merge(c);
        }
        t
    }

    /// CSV dump, one row per kernel with any activity, in fixed kernel order.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("kernel,flops_add,flops_mul,flops_div,bytes_read,bytes_written,calls\n");
        for k in KernelId::ALL {
            let c = self.get(k);
            if c.is_zero() {
                continue;
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                k.name(),
                c.flops_add,
                c.flops_mul,
                c.flops_div,
                c.bytes_read,
                c.bytes_written,
                c.calls
            ));
        }
        out
    }
}

/// Execution context of one solver instance: cached backend resolution,
/// counters, and this instance's noise stream.
#[derive(Clone, Debug)]
pub struct Context {
    scope: ScopeMap,
    resolved: [Backend; KernelId::COUNT],
    pub counters: OpCounters,
    rng: NoiseRng,
    seed: u64,
    instance: u64,
}

impl Context {
    /// Builds a context for stream `instance` of this scope. The noise
    /// stream is derived from (seed, instance); the seed comes from the
    /// scope's Mca backend (0 when there is none, where it is never drawn).
    pub fn new(scope: ScopeMap, instance: u64) -> Self {
        let seed = scope.mca_seed().unwrap_or(0);
        let resolved = KernelId::ALL.map(|k| *scope.resolve(k.name()));
        Context {
            scope,
            resolved,
            counters: OpCounters::new(),
            rng: NoiseRng::new(seed, instance),
            seed,
            instance,
        }
    }

    /// Uninstrumented context: everything IEEE, stream 0.
    pub fn ieee() -> Self {
        Self::new(ScopeMap::ieee(), 0)
    }

    pub fn scope(&self) -> &ScopeMap {
        &self.scope
    }

    pub fn backend_for(&self, kernel: KernelId) -> &Backend {
        &self.resolved[kernel as usize]
    }

    /// True when every kernel resolves to IEEE (include/exclude filtering
    /// taken into account), i.e. the run is bit-identical to uninstrumented.
    pub fn is_pure_ieee(&self) -> bool {
        self.resolved.iter().all(|b| *b == Backend::Ieee)
    }

    pub fn stream(&self) -> (u64, u64) {
        (self.seed, self.instance)
    }
}

/// Resolves the kernel's backend, applies `a op b` under it, and counts the
/// operation in the matching class.
#[inline]
pub fn scoped_op(kernel: KernelId, a: f64, b: f64, op: FpOp, ctx: &mut Context) -> f64 {
    ctx.counters.add_flop(kernel, op.class());
    match ctx.resolved[kernel as usize] {
        Backend::Ieee => op.apply_f64(a, b),
        Backend::Vprec(fmt) => vprec_op(a, b, op, fmt),
        Backend::Mca(cfg) => mca_op(a, b, op, &cfg, &mut ctx.rng),
    }
}

/// Adds declared memory traffic to the kernel's counters. Kernels
/// self-report touches at their storage width.
#[inline]
pub fn charge_traffic(kernel: KernelId, bytes_read: u64, bytes_written: u64, ctx: &mut Context) {
    ctx.counters.charge_traffic(kernel, bytes_read, bytes_written);
}

/// Arithmetic executor the kernels are generic over: the instrumented
/// binary64 path and the native f32/f64 path implement it.
pub trait Exec {
    type Num: Real;

    fn op(&mut self, kernel: KernelId, op: FpOp, a: Self::Num, b: Self::Num) -> Self::Num;
    fn traffic(&mut self, kernel: KernelId, bytes_read: u64, bytes_written: u64);
    fn record_call(&mut self, kernel: KernelId);

    /// Storage width in bytes, for declarative traffic accounting.
    fn width() -> u64 {
        Self::Num::WIDTH
    }
}

/// Instrumented executor: binary64 storage, ops dispatched through the
/// context's backends.
pub struct Scoped<'a> {
    pub ctx: &'a mut Context,
}

impl<'a> Scoped<'a> {
    pub fn new(ctx: &'a mut Context) -> Self {
        Scoped { ctx }
    }
}

impl Exec for Scoped<'_> {
    type Num = f64;

    #[inline(always)]
    fn op(&mut self, kernel: KernelId, op: FpOp, a: f64, b: f64) -> f64 {
        scoped_op(kernel, a, b, op, self.ctx)
    }

    #[inline(always)]
    fn traffic(&mut self, kernel: KernelId, bytes_read: u64, bytes_written: u64) {
        charge_traffic(kernel, bytes_read, bytes_written, self.ctx);
    }

    #[inline(always)]
    fn record_call(&mut self, kernel: KernelId) {
        self.ctx.counters.record_call(kernel);
    }
}

/// Native executor: plain arithmetic on T storage, counting only.
pub struct Native<'a, T: Real> {
    pub counters: &'a mut OpCounters,
    _marker: PhantomData<T>,
}

impl<'a, T: Real> Native<'a, T> {
    pub fn new(counters: &'a mut OpCounters) -> Self {
        Native {
            counters,
            _marker: PhantomData,
        }
    }
}

impl<T: Real> Exec for Native<'_, T> {
    type Num = T;

    #[inline(always)]
    fn op(&mut self, kernel: KernelId, op: FpOp, a: T, b: T) -> T {
        self.counters.add_flop(kernel, op.class());
        op.apply(a, b)
    }

    #[inline(always)]
    fn traffic(&mut self, kernel: KernelId, bytes_read: u64, bytes_written: u64) {
        self.counters.charge_traffic(kernel, bytes_read, bytes_written);
    }

    #[inline(always)]
    fn record_call(&mut self, kernel: KernelId) {
        self.counters.record_call(kernel);
    }
}
