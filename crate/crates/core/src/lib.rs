//! Joint channel estimation and data detection for low-rank multi-user
//! uplink MIMO.
//!
//! The receiver splits the channel into blocks of at most `n_r` users in a
//! successive-interference-cancellation order and runs annealed Langevin
//! dynamics on every block, driven by a Gaussian likelihood that treats
//! not-yet-decoded users as coloured noise together with noise-conditioned
//! channel and symbol priors. Linear LS/LMMSE receivers and a single-block
//! joint Langevin receiver serve as baselines, and [`bench`] runs paired
//! Monte-Carlo sweeps over SNR.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod channel;
pub mod detector;
pub mod linalg;
pub mod prior;
pub mod random;
pub mod signal;

pub use linalg::{CMatrix, C64};
