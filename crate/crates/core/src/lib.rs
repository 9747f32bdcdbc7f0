//! Consensus-aware model merging on small dense classifiers.
//!
//! The crate is `no_std` (it only needs `alloc`) and covers the whole
//! algorithmic pipeline:
//!
//! - [`nn`]: a feed-forward classifier with exact reverse-mode gradients.
//! - [`taskgen`]: synthetic multi-task Gaussian-cluster problems plus the
//!   pretrain / fine-tune loops that produce the checkpoints to merge.
//! - [`merge`]: task vectors and the weight-averaging, task-arithmetic and
//!   ties-merging baselines.
//! - [`sampling`]: entropy scoring of unlabeled pools and the (class-balanced)
//!   entropy-minimization selection of pseudo-labeled credible sets.
//! - [`calm`]: the efficient/sequential task split and consensus-aware
//!   binary-mask optimization.
//! - [`metrics`]: accuracy evaluation and mask analysis.
//!
//! File formats, configuration and the CLI live in the `calm-bench` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod calm;
pub mod error;
pub mod merge;
pub mod metrics;
pub mod nn;
pub mod sampling;
pub mod seed;
pub mod taskgen;

pub use error::{Error, Result};
pub use nn::{Activation, Batch, ClassWindow, GradResult, Matrix, ModelSpec, ParamVector};
