//! Contrastive pretraining engine with closed-loop augmentation scheduling.
//!
//! A pool of augmentation compositions competes for sub-batch allocation:
//! each epoch the pretext-task accuracy of every composition feeds a softmax
//! update of the sampling probabilities, so harder compositions receive more
//! data while easy ones shrink. Training is deterministic given a seed, and
//! results are invariant to the worker thread count.

pub mod ablation;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod scheduler;
pub mod trainer;

pub use error::{Error, Result};
