//! Monte-Carlo sweeps over SNR with paired trials, CSV/SVG reports and the
//! command-line front end.
//!
//! Trial `t` of a sweep is seeded with `base_seed + t`. Its channel, symbols,
//! noise and Langevin noise come from separate streams of that seed, so every
//! algorithm sees the same realization and results do not depend on the
//! number of worker threads.

pub mod cli;
pub mod config;
pub mod report;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::detector::DetectorError;
use crate::linalg::LinalgError;
use crate::prior::PriorError;
use crate::signal::SignalError;

pub use config::{Algorithm, ExperimentConfig, PriorSpec};
pub use report::{emit_plot, parse_csv, render_svg, write_csv, PlotKind};
pub use sweep::{run_sweep, MetricRecord, SweepResult, TrialOutcome};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
    #[error(
        "{algorithm} diverged in {diverged} of {trials} trials at {snr_db} dB (limit {}%)",
        sweep::MAX_DIVERGENCE_RATE * 100.0
    )]
    DivergenceRate {
        algorithm: &'static str,
        snr_db: f64,
        diverged: usize,
        trials: usize,
    },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
