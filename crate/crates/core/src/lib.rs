//! Forecasting pipeline for non-stationary price series.
//!
//! The pieces, bottom up:
//!
//! - [`data`]: OHLCV ingestion, min-max scaling fitted on the training
//!   prefix, sliding-window slicing and the chronological 9:1 split.
//! - [`pattern`]: DTW matching of input sub-windows against 13 reference
//!   shapes, emitted as one-hot channel blocks per granularity.
//! - [`zigzag`]: alternating peak/valley pivots at relative reversal
//!   thresholds, emitted as 3-class one-hot channel blocks.
//! - [`tensor`]: dense f64 tensors with a reverse-mode tape and Adam.
//! - [`model`]: the bidirectional encoder / attention / autoregressive
//!   decoder forecaster, its training loop and JSON checkpoints.
//! - [`losses`]: RMSE, SPV, MPV and WRMSE training losses plus the
//!   PVRMSE / PVMAE / SMAPE evaluation metrics.
//! - [`baselines`]: random-walk persistence, a dense-network baseline and
//!   the Diebold-Mariano loss-differential test.
//! - [`experiment`]: config-driven runs, comparison matrices, verifiable
//!   reports.
//! - [`synth`]: deterministic synthetic market data for tests and demos.

pub mod baselines;
pub mod data;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod pattern;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod zigzag;

pub use data::{DatasetSplit, OhlcvRecord, PriceSeries, ScaleTransform, WindowPair};
pub use experiment::{ExperimentConfig, MatrixConfig, RunReport};
pub use losses::{LossKind, LossParams};
pub use model::{CellKind, Checkpoint, ModelConfig, Seq2Seq, TrainSettings};
pub use rng::Rng;
pub use tensor::{Tape, Tensor};
