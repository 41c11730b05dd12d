use std::f64::consts::PI;

use super::{check_shape, PriorError, ScorePrior};
use crate::linalg::CMatrix;

/// Entry-wise CN(mean, var) channel prior.
///
/// With `mean == None` the prior is zero-mean and accepts any block shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Option<CMatrix>,
    var: f64,
}

impl GaussianPrior {
    pub fn new(mean: CMatrix, var: f64) -> Result<Self, PriorError> {
        check_var(var)?;
        Ok(Self {
            mean: Some(mean),
            var,
        })
    }

    /// Zero-mean prior of any shape.
    pub fn white(var: f64) -> Result<Self, PriorError> {
        check_var(var)?;
        Ok(Self { mean: None, var })
    }

    pub fn mean(&self) -> Option<&CMatrix> {
        self.mean.as_ref()
    }

    pub fn var(&self) -> f64 {
        self.var
    }
}

fn check_var(var: f64) -> Result<(), PriorError> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(PriorError::Parameter(format!(
            "prior variance must be positive, got {var}"
        )));
    }
    Ok(())
}

/// `-(h - mean) / (var + σ²)`, the score of CN(mean, var + σ²).
pub fn gaussian_score(p: &GaussianPrior, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError> {
    check_shape(p.shape(), h)?;
    let v = p.var + sigma * sigma;
    Ok(match &p.mean {
        Some(m) => m.try_sub(h)?.scale(1.0 / v),
        None => h.scale(-1.0 / v),
    })
}

impl ScorePrior for GaussianPrior {
    fn score(&self, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError> {
        gaussian_score(self, h, sigma)
    }

    fn log_density(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        check_shape(self.shape(), h)?;
        let v = self.var + sigma * sigma;
        let dist = match &self.mean {
            Some(m) => h.try_sub(m)?.fro_norm_sq(),
            None => h.fro_norm_sq(),
        };
        let n = h.as_slice().len() as f64;
        Ok(-n * (PI * v).ln() - dist / v)
    }

    fn curvature(&self, _h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        Ok(1.0 / (self.var + sigma * sigma))
    }

    fn entry_variance(&self) -> f64 {
        self.var
    }

    fn shape(&self) -> Option<(usize, usize)> {
        self.mean.as_ref().map(CMatrix::shape)
    }
}
