//! Reference-model-free preference alignment on a tiny causal language model.
//!
//! The crate bundles a fixed-window neural LM with exact backpropagation, the
//! odds-ratio preference objective (SFT negative log-likelihood plus an
//! odds-ratio penalty) and its baselines, a pairwise reward model, and the
//! diagnostics used to study how the objectives behave during training.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lm;
pub mod math;
pub mod objectives;
pub mod reward;
pub mod rng;
pub mod svg;
pub mod trainer;

pub use data::{DatasetSplit, DropStats, PreferenceTriple, RawTriple};
pub use error::{Error, Result};
pub use lm::{GradBlock, LMConfig, SeqScore, TinyLM, Vocab};
pub use objectives::{HyperParams, LossReport};
pub use reward::{RewardModel, WinRateReport};
pub use trainer::{LossKind, TelemetryRow, TrainConfig, TrainOutcome};
