//! Noise-conditioned score models.
//!
//! A [`ScorePrior`] returns `∇ log p_σ(H)` where `p_σ` is the channel prior
//! convolved with CN(0, σ²) noise on every entry. Gradients are Wirtinger
//! derivatives `∂/∂H̄` and densities use `exp(-|h - μ|²/v)` per complex entry,
//! the same convention as the likelihood terms in [`crate::detector`].

mod gaussian;
mod gmm;
mod symbol;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError};

pub use gaussian::{gaussian_score, GaussianPrior};
pub use gmm::{
    extract_blocks, fit_gmm, fit_gmm_blocks, gmm_score, DomainTransform, GmmFit, GmmOptions,
    GmmPrior, VAR_FLOOR,
};
pub use symbol::{symbol_log_density, symbol_score};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("prior expects a {expected:?} block, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid prior parameter: {0}")]
    Parameter(String),
    #[error("cannot fit a prior on an empty dataset")]
    EmptyDataset,
    #[error("{k} components requested but only {n} samples available")]
    TooManyComponents { k: usize, n: usize },
    #[error("prior file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("prior I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Score model for a channel block.
pub trait ScorePrior: Send + Sync + fmt::Debug {
    /// `∇_{H̄} log p_σ(H)`, same shape as `h`.
    fn score(&self, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError>;

    /// Normalized `log p_σ(H)`.
    fn log_density(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError>;

    /// Curvature scale of `-log p_σ` near `h`, for step-size control.
    fn curvature(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError>;

    /// Average marginal variance of one entry.
    fn entry_variance(&self) -> f64;

    /// Fixed block shape, or `None` when any shape is accepted.
    fn shape(&self) -> Option<(usize, usize)>;
}

fn check_shape(expected: Option<(usize, usize)>, h: &CMatrix) -> Result<(), PriorError> {
    match expected {
        Some(e) if e != h.shape() => Err(PriorError::Dimension {
            expected: e,
            got: h.shape(),
        }),
        _ => Ok(()),
    }
}

/// Product of independent column-group priors.
///
/// Users are mutually independent, so a prior over an `n_r × c` block factors
/// over any split of its columns. A block of width `c` is split greedily into
/// the widest registered priors; registering a width-1 prior makes every
/// width available.
#[derive(Debug, Clone)]
pub struct ColumnProductPrior {
    by_width: BTreeMap<usize, Arc<dyn ScorePrior>>,
}

impl ColumnProductPrior {
    pub fn new() -> Self {
        Self {
            by_width: BTreeMap::new(),
        }
    }

    pub fn single(prior: Arc<dyn ScorePrior>) -> Result<Self, PriorError> {
        let mut p = Self::new();
        p.insert(prior)?;
        Ok(p)
    }

    /// Registers a fixed-shape prior under its column count.
    pub fn insert(&mut self, prior: Arc<dyn ScorePrior>) -> Result<(), PriorError> {
        let (rows, cols) = prior.shape().ok_or_else(|| {
            PriorError::Parameter("column product needs fixed-shape priors".into())
        })?;
        if let Some((r, _)) = self.rows() {
            if r != rows {
                return Err(PriorError::Dimension {
                    expected: (r, cols),
                    got: (rows, cols),
                });
            }
        }
        self.by_width.insert(cols, prior);
        Ok(())
    }

    pub fn widths(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_width.keys().copied()
    }

    fn rows(&self) -> Option<(usize, usize)> {
        self.by_width.values().next().and_then(|p| p.shape())
    }

    /// Column chunks `(start, width)` covering `cols`.
    fn split(&self, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>, PriorError> {
        let mismatch = || PriorError::Dimension {
            expected: self.rows().unwrap_or((0, 0)),
            got: (rows, cols),
        };
        match self.rows() {
            Some((r, _)) if r == rows => {}
            _ => return Err(mismatch()),
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < cols {
            let left = cols - start;
            let w = self
                .by_width
                .range(..=left)
                .next_back()
                .map(|(w, _)| *w)
                .ok_or_else(mismatch)?;
            out.push((start, w));
            start += w;
        }
        Ok(out)
    }

    pub fn supports(&self, rows: usize, cols: usize) -> bool {
        self.split(rows, cols).is_ok()
    }
}

impl Default for ColumnProductPrior {
    fn default() -> Self {
        Self::new()
    }
}

impl ScorePrior for ColumnProductPrior {
    fn score(&self, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError> {
        let chunks = self.split(h.rows(), h.cols())?;
        if let [(0, w)] = chunks[..] {
            return self.by_width[&w].score(h, sigma);
        }
        let mut out = CMatrix::zeros(h.rows(), h.cols());
        for (start, w) in chunks {
            let idx: Vec<usize> = (start..start + w).collect();
            let s = self.by_width[&w].score(&h.col_range(start, start + w), sigma)?;
            out.scatter_cols(&idx, &s);
        }
        Ok(out)
    }

    fn log_density(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        let mut total = 0.0;
        for (start, w) in self.split(h.rows(), h.cols())? {
            total += self.by_width[&w].log_density(&h.col_range(start, start + w), sigma)?;
        }
        Ok(total)
    }

    fn curvature(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        let mut worst: f64 = 0.0;
        for (start, w) in self.split(h.rows(), h.cols())? {
            let c = self.by_width[&w].curvature(&h.col_range(start, start + w), sigma)?;
            worst = worst.max(c);
        }
        Ok(worst)
    }

    fn entry_variance(&self) -> f64 {
        let n = self.by_width.len().max(1) as f64;
        self.by_width
            .values()
            .map(|p| p.entry_variance())
            .sum::<f64>()
            / n
    }

    fn shape(&self) -> Option<(usize, usize)> {
        None
    }
}
