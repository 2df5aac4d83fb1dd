//! Receptive-field alignment and grid-effect analysis for convolutional
//! detectors, plus detection metrics.
//!
//! * [`archspec`]: convolution-stack descriptions and the backbone template.
//! * [`rf`]: receptive field, cumulative stride and output size per layer.
//! * [`fusion`]: shape inference over the multi-scale fusion neck.
//! * [`gridscope`]: pixel-utilization maps, gridding diagnostics and the
//!   anti-grid admissibility rule for dilated convolutions.
//! * [`aligner`]: anchor statistics, per-stage RF targets and block search.
//! * [`detmetrics`]: IoU matching, precision/recall/F1, AP and mAP50.
//!
//! The heavy loops (utilization maps, block search, evaluation) take an
//! [`Exec`] strategy; with the default `parallel` feature they run on rayon.

pub mod aligner;
pub mod archspec;
mod csvio;
pub mod detmetrics;
pub mod exec;
pub mod fusion;
pub mod gridscope;
pub mod rf;

pub use csvio::CsvError;
pub use exec::Exec;
