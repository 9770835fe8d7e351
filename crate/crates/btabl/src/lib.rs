//! Training and evaluation of a temporal-attention bilinear network for
//! 3-class mid-price movement classification on limit-order-book data.
//!
//! The library couples a hand-derived per-sample backward pass for the
//! attention-augmented bilinear layer with a mean-field Gaussian
//! natural-gradient optimizer (VOGN) and the usual SGD/ADAM baselines,
//! then analyses the resulting predictive distributions: rank statistics,
//! survivor functions, score densities, ROC/AUROC, calibration curves.
//!
//! Modules:
//! - [`linalg`]   — small dense f64 matrices (row-major)
//! - [`lobdata`]  — FI-2010 parsing, windowing, chronological splits
//! - [`synth`]    — synthetic planted-pattern windows for smoke benchmarks
//! - [`model`]    — TABL forward pass and per-sample gradients
//! - [`optim`]    — VOGN, ADAM, SGD with momentum, plateau LR schedule
//! - [`bayes`]    — predictive distributions and uncertainty statistics
//! - [`metrics`]  — confusion matrices, averaged metrics, ROC, calibration
//! - [`cli`]      — config, checkpoints, train/evaluate/predict commands

pub mod bayes;
pub mod cli;
pub mod linalg;
pub mod lobdata;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod synth;
