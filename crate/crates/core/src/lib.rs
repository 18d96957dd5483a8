//! Thin-slice behavioral signal pipeline.
//!
//! Per-frame facial landmark streams go in; per-segment functional tables,
//! hypothesis-test reports, stability-validated feature sets and risk-level
//! classification results come out. The stages are:
//!
//! 1. [`ingest`]: parse and validate landmark recordings and cohort manifests.
//! 2. [`signals`]: eye aspect ratio, weak-perspective head pose, head distance.
//! 3. [`postproc`]: smoothing, eye averaging, 0-1 scaling, 2-minute slicing.
//! 4. [`functionals`]: 30 statistics per channel (210 with all 7 channels).
//! 5. [`stats`]: one-way ANOVA, Welch post-hoc tests, type-III two-factor
//!    ANOVA, subject-level repeated-measures test.
//! 6. [`select`]: multi-method feature selection with Jaccard and
//!    between-threshold stability.
//! 7. [`classify`]: MLP and SVM models with resampling, grid search,
//!    balanced accuracy, multiclass MCC and randomization controls.
//!
//! [`synth`] generates deterministic synthetic cohorts and [`pipeline`]
//! wires everything into reproducible run directories.

pub mod classify;
pub mod dataset;
pub mod functionals;
pub mod ingest;
pub mod pipeline;
pub mod postproc;
pub mod seed;
pub mod select;
pub mod signals;
pub mod split;
pub mod stats;
pub mod synth;

pub use dataset::Dataset;
pub use ingest::{LandmarkFrame, Point2, Recording, RiskLevel};
