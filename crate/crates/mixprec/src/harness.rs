//! Experiment drivers built on top of the solver: precision sweeps, noise
//! ensembles, the demotion-screening pipeline, and wall-clock comparisons.
//!
//! Everything here is deterministic given its inputs (timing aside): runs are
//! seeded through [`crate::context::Context`] instance streams, and every CSV
//! artifact carries a fingerprint of the configuration that produced it so
//! stale outputs can't be mistaken for fresh ones.

pub mod compare;
pub mod ensemble;
pub mod output;
pub mod pipeline;
pub mod sweep;
