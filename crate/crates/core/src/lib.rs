//! Arrhythmia classification from single ECG beats with post-hoc attribution.
//!
//! The pipeline runs end to end in pure Rust:
//!
//! - [`signal_io`]: WFDB (format 212 signals, binary annotations) and CSV beat ingestion
//! - [`preprocess`]: Pan-Tompkins band-pass/feature signal, R-peak detection,
//!   216-sample beat windows and dataset assembly
//! - [`autodiff`]: a small tensor engine with reverse-mode differentiation
//! - [`model`]: the 1D CNN classifier, training with best-validation checkpointing
//! - [`explain`]: permutation importance, KernelSHAP, Gradient SHAP, DeepLIFT and
//!   an exact Shapley oracle
//! - [`metrics`]: confusion matrix, per-class precision/sensitivity/F1, one-vs-rest ROC
//! - [`viz`]: SVG saliency maps and ROC plots
//!
//! [`synth`] generates synthetic ECG with known ground truth for tests and demos,
//! and [`selftest`] bundles fast oracle checks used by the CLI.

pub mod autodiff;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod selftest;
pub mod signal_io;
pub mod synth;
pub mod viz;

/// Number of samples in one beat window at 360 Hz (200 ms before, 400 ms after the R-peak).
pub const BEAT_LEN: usize = 216;
