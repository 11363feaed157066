//! Penalised logistic regression for multi-layer datasets.
//!
//! The crate combines five pieces that together support building binary
//! classifiers on column-partitioned ("layered") designs such as multi-omic
//! studies:
//!
//! * [`data`] — the layered design matrix, responses, standardization and
//!   CSV/JSON fixtures;
//! * [`solver`] — elastic-net logistic regression by cyclic coordinate
//!   descent with per-feature penalty factors and warm-started λ paths;
//! * [`cv`] — stratified K-fold cross-validation for λ and repeated-CV
//!   selection-set aggregation;
//! * [`epsgo`] — Gaussian-process surrogate optimisation of the CV error
//!   surface (expected improvement over a Latin hypercube seeding);
//! * [`methods`] — the integration strategies built on top: a single
//!   elastic net over the stacked layers, per-layer penalty factors with
//!   shared or per-layer mixing, two-step select-then-ridge variants, and
//!   univariate screens;
//! * [`simulate`] — the synthetic benchmark generator and method scoring;
//! * [`ranking`] — per-layer probability models, average-rank aggregation
//!   and association-validation regressions.

pub mod cv;
pub mod data;
pub mod epsgo;
pub mod error;
pub mod linalg;
pub mod methods;
pub mod ranking;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
