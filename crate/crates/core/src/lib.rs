//! Contrastive partial ranking distillation on a synthetic bimodal world.
//!
//! A latent corpus supplies paired views, a dual-encoder student is trained
//! with momentum queues, and a simulated cross-encoder teacher supplies graded
//! relevance scores that are distilled as partial rankings over hard negatives.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod memory;
pub mod mining;
pub mod numerics;
pub mod synthworld;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
