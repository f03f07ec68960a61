//! Desk-scale gradient inversion laboratory.
//!
//! Everything needed to study how vulnerable individual samples are to
//! gradient inversion: a small smooth classifier ([`smallnet`]), the
//! gradient-matching attack objective and optimizer ([`gradmatch`],
//! [`attack`]), matrix-free Hessian eigenvalue proxies ([`lavp`]), image
//! similarity metrics and Spearman correlation ([`metrics`]), and an
//! orchestration layer with a CSV/SVG reporting pipeline ([`harness`]).
//!
//! All computation is `f64`, deterministic, and seeded: a full experiment
//! is a pure function of its [`harness::ExperimentConfig`].

pub mod attack;
pub mod error;
pub mod gradmatch;
pub mod harness;
pub mod lavp;
pub mod metrics;
pub mod smallnet;
pub mod tensorcore;

pub use error::{Error, Result};
