//! Crate-wide error type.
//!
//! Configuration and validation problems are ordinary variants; the two
//! solver-defect variants are kept distinguishable because the command-line
//! tool maps them to a different exit code.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vprec format: {0}")]
    VprecFormat(String),

    #[error("mca config: {0}")]
    McaConfig(String),

    #[error("backend spec `{spec}`: {reason}")]
    BackendSpec { spec: String, reason: String },

    #[error("scope config: {0}")]
    ScopeConfig(String),

    #[error("machine model: {0}")]
    MachineModel(String),

    #[error("mesh: {0}")]
    Mesh(String),

    #[error("gll setup: Newton iteration did not converge for nx1 = {nx1}")]
    GllNoConvergence { nx1: usize },

    #[error("stats: {0}")]
    Stats(String),

    #[error("roofline: {0}")]
    Roofline(String),

    #[error("config: {0}")]
    Config(String),

    #[error("solver defect: pap = {pap} <= 0 at iteration {iteration}, operator not SPD under this backend")]
    IndefiniteOperator { iteration: u32, pap: f64 },

    #[error("solver defect: residual is NaN at iteration {iteration}")]
    DivergedNan { iteration: u32 },

    #[error("jacobi preconditioner: zero diagonal at interior dof {index}")]
    ZeroDiagonal { index: usize },

    #[error("variant `{variant}` runs on native storage and cannot be combined with a non-ieee scope; emulation backends need double storage")]
    MixedPaths { variant: &'static str },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical solver defects (as opposed to bad configuration).
    /// The CLI exits 3 on these and 2 on everything else.
    pub fn is_solver_defect(&self) -> bool {
        matches!(
            self,
            Error::IndefiniteOperator { .. } | Error::DivergedNan { .. }
        )
    }
}
