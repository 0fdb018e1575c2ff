//! Dual-pathway camouflaged-object segmentation in pure Rust.
//!
//! The crate implements an encoder-decoder segmentation model organized around
//! two specialized decoder branches plus the tooling needed to train and
//! evaluate it end to end on a single machine:
//!
//! - [`tensor`] — a small reverse-mode autodiff engine over `f64` `ndarray`
//!   buffers (convolutions, resampling, normalization, reductions).
//! - [`backbone`] — the encoder contract: a from-scratch patch-token
//!   transformer producing four feature maps on a common grid, with an
//!   adapter trait for plugging in external pretrained encoders.
//! - [`edge_path`] — the edge refinement branch: channel reduction,
//!   content-adaptive upsampling, and cascaded enhancement blocks whose
//!   gradient/discontinuity kernels start from Sobel and Laplacian operators.
//! - [`context_path`] — the contextual localization branch: semantic
//!   enhancement units, image appearance analysis, guided foreground/background
//!   contrast, and iterative attention gating for distractor suppression.
//! - [`fusion`] — spatial-attention fusion of the two branches and the final
//!   prediction head.
//! - [`loss`] — focal / Tversky / total-variation / edge-restricted Dice terms,
//!   instance-size weighting, and the weighted three-head total.
//! - [`metrics`] — structure measure, enhanced alignment, weighted and mean
//!   F-measures, and MAE, with report aggregation and CSV/JSON emission.
//! - [`data`] — dataset ingestion, preprocessing, edge-target generation, and
//!   a procedural camouflage scene generator (with optional salient
//!   distractors) for desk-scale experiments.
//! - [`harness`] — training loop, AdamW + plateau schedule, checkpointing,
//!   ablation toggles, and the evaluation / prediction entry points used by
//!   the CLI.

pub mod backbone;
pub mod context_path;
pub mod data;
pub mod edge_path;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod imgproc;
pub mod init;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{AblationToggles, Model, ModelConfig, PredictionTriplet};
pub use params::{ParamId, ParamStore};
pub use tensor::{Tape, Var};
