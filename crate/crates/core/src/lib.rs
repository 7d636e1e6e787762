//! Moving-object segmentation: a low-rank background, a contiguous foreground support
//! found by graph cuts, and per-frame parametric alignment, estimated jointly.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod decolor;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod motion;
pub mod mrf;
pub mod sequence;
pub mod softimpute;
pub mod synth;

pub use error::{Error, Result};
