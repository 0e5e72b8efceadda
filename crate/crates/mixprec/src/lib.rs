//! Precision-engineering toolkit for a spectral-element conjugate-gradient
//! mini-app: reduced-precision emulation, stochastic rounding analysis, and
//! roofline-based speedup screening.

pub mod cg;
pub mod context;
pub mod error;
pub mod field;
pub mod fpemu;
pub mod harness;
pub mod kernels;
pub mod mca;
pub mod mesh;
pub mod num;
pub mod roofline;
pub mod stats;

pub use error::{Error, Result};
