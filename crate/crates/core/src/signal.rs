//! QAM constellations, frame construction, AWGN and receiver metrics.

use rand::Rng;
use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError, C64};
use crate::random::{complex_normal, SimRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("unsupported constellation size {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(usize),
    #[error("invalid frame parameter: {0}")]
    Parameter(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Square Gray-coded QAM alphabet with unit average energy.
///
/// `points[s]` is the symbol carrying the bit label `s`; labels of
/// horizontally or vertically adjacent points differ in one bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    bits_per_symbol: usize,
}

impl Constellation {
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Smallest distance between two distinct points.
    pub fn min_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                d = d.min((a - b).norm());
            }
        }
        d
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest_index(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.points.iter().enumerate() {
            let d = (z - s).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn nearest(&self, z: C64) -> C64 {
        self.points[self.nearest_index(z)]
    }
}

fn gray(n: usize) -> usize {
    n ^ (n >> 1)
}

pub fn make_qam(m: usize) -> Result<Constellation, SignalError> {
    let bits = match m {
        4 => 2,
        16 => 4,
        64 => 6,
        other => return Err(SignalError::UnsupportedOrder(other)),
    };
    let side = 1usize << (bits / 2);
    let half = bits / 2;
    // Gray position -> amplitude level.
    let mut level_of_label = vec![0.0; side];
    for pos in 0..side {
        level_of_label[gray(pos)] = (2 * pos) as f64 - (side - 1) as f64;
    }
    let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt().recip();
    let points = (0..m)
        .map(|label| {
            let i_label = label >> half;
            let q_label = label & (side - 1);
            C64::new(level_of_label[i_label], level_of_label[q_label]) * scale
        })
        .collect();
    Ok(Constellation {
        points,
        bits_per_symbol: bits,
    })
}

/// Pilot and data symbols together with what the receiver observes.
#[derive(Debug, Clone)]
pub struct Frame {
    pub x_p: CMatrix,
    pub x_d: CMatrix,
    pub y: CMatrix,
    pub sigma0_sq: f64,
}

impl Frame {
    pub fn pilots(&self) -> usize {
        self.x_p.cols()
    }

    pub fn data_len(&self) -> usize {
        self.x_d.cols()
    }

    /// Full transmit block `[X_P, X_D]`.
    pub fn x(&self) -> CMatrix {
        self.x_p.hcat(&self.x_d).expect("pilot and data rows agree")
    }

    pub fn y_pilot(&self) -> CMatrix {
        self.y.col_range(0, self.pilots())
    }

    pub fn y_data(&self) -> CMatrix {
        self.y.col_range(self.pilots(), self.y.cols())
    }
}

/// Matrix of uniformly drawn constellation points.
pub fn random_symbols(c: &Constellation, rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    let m = c.order();
    CMatrix::from_fn(rows, cols, |_, _| c.points[rng.random_range(0..m)])
}

/// Draws `(x_p, x_d)`: pilots first, then data, both uniform over the alphabet.
pub fn draw_frame(
    c: &Constellation,
    n_u: usize,
    p: usize,
    d: usize,
    rng: &mut SimRng,
) -> Result<(CMatrix, CMatrix), SignalError> {
    if n_u == 0 || p == 0 || d == 0 {
        return Err(SignalError::Parameter(format!(
            "n_u, p and d must be >= 1 (got {n_u}, {p}, {d})"
        )));
    }
    let x_p = random_symbols(c, n_u, p, rng);
    let x_d = random_symbols(c, n_u, d, rng);
    Ok((x_p, x_d))
}

/// Noise variance per complex entry for a given SNR.
///
/// SNR is received signal power per antenna over noise power, with unit
/// symbol energy: `σ₀² = n_u / 10^(snr_db / 10)`.
pub fn noise_variance(n_u: usize, snr_db: f64) -> f64 {
    n_u as f64 / 10f64.powf(snr_db / 10.0)
}

/// `y = h·x + z` with `z` i.i.d. CN(0, σ₀²). Returns `(y, σ₀²)`.
///
/// An infinite SNR yields `σ₀² = 0` and leaves `rng` untouched.
pub fn transmit(
    h: &CMatrix,
    x: &CMatrix,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<(CMatrix, f64), SignalError> {
    let mut y = h.matmul(x)?;
    let sigma0_sq = noise_variance(h.cols(), snr_db);
    add_noise(&mut y, sigma0_sq, rng);
    Ok((y, sigma0_sq))
}

/// Adds CN(0, σ²) to every entry, column-major draw order. No draws when σ² = 0.
pub fn add_noise(y: &mut CMatrix, sigma_sq: f64, rng: &mut impl Rng) {
    if sigma_sq == 0.0 {
        return;
    }
    let s = sigma_sq.sqrt();
    for z in y.as_mut_slice() {
        *z += complex_normal(rng) * s;
    }
}

/// Entry-wise nearest-point decision.
pub fn hard_decision(x: &CMatrix, c: &Constellation) -> CMatrix {
    x.map(|z| c.nearest(z))
}

pub fn nmse(h_hat: &CMatrix, h: &CMatrix) -> Result<f64, SignalError> {
    let denom = h.fro_norm_sq();
    if denom == 0.0 {
        return Err(SignalError::UndefinedMetric(
            "reference channel has zero norm",
        ));
    }
    Ok(h_hat.try_sub(h)?.fro_norm_sq() / denom)
}

/// Fraction of entries whose hard decisions disagree.
pub fn ser(x_hat: &CMatrix, x: &CMatrix, c: &Constellation) -> Result<f64, SignalError> {
    if x_hat.shape() != x.shape() {
        return Err(LinalgError::DimensionMismatch {
            op: "ser",
            lhs: x_hat.shape(),
            rhs: x.shape(),
        }
        .into());
    }
    let errors = x_hat
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .filter(|(a, b)| c.nearest_index(**a) != c.nearest_index(**b))
        .count();
    Ok(errors as f64 / x.as_slice().len() as f64)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
