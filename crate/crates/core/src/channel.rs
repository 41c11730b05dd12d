//! Synthetic uplink channel generators and the `.chds` dataset format.
//!
//! Three statistical models are provided: i.i.d. Rayleigh, Kronecker
//! (exponential correlation at both ends) and a clustered angular model where
//! each user sees a few plane waves on a uniform linear array. All produce
//! `n_r × n_u` matrices with unit average per-entry power.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError, C64};
use crate::random::{complex_normal, complex_normal_matrix, seeded, SimRng};

pub const DATASET_MAGIC: [u8; 4] = *b"CHDS";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel parameter: {0}")]
    Parameter(String),
    #[error("dataset format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    IidRayleigh,
    Kronecker,
    Clustered,
}

impl ModelTag {
    pub fn code(self) -> u32 {
        match self {
            ModelTag::IidRayleigh => 0,
            ModelTag::Kronecker => 1,
            ModelTag::Clustered => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ModelTag::IidRayleigh),
            1 => Some(ModelTag::Kronecker),
            2 => Some(ModelTag::Clustered),
            _ => None,
        }
    }
}

/// A channel model together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelModel {
    IidRayleigh,
    Kronecker { rho_r: f64, rho_t: f64 },
    Clustered { n_paths: usize },
}

impl ChannelModel {
    pub fn tag(&self) -> ModelTag {
        match self {
            ChannelModel::IidRayleigh => ModelTag::IidRayleigh,
            ChannelModel::Kronecker { .. } => ModelTag::Kronecker,
            ChannelModel::Clustered { .. } => ModelTag::Clustered,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        match *self {
            ChannelModel::IidRayleigh => Ok(()),
            ChannelModel::Kronecker { rho_r, rho_t } => {
                check_rho("rho_r", rho_r)?;
                check_rho("rho_t", rho_t)
            }
            ChannelModel::Clustered { n_paths: 0 } => {
                Err(ChannelError::Parameter("n_paths must be >= 1".into()))
            }
            ChannelModel::Clustered { .. } => Ok(()),
        }
    }

    pub fn generate(
        &self,
        n_r: usize,
        n_u: usize,
        rng: &mut SimRng,
    ) -> Result<CMatrix, ChannelError> {
        check_dims(n_r, n_u)?;
        match *self {
            ChannelModel::IidRayleigh => Ok(complex_normal_matrix(n_r, n_u, rng)),
            ChannelModel::Kronecker { rho_r, rho_t } => kronecker(n_r, n_u, rho_r, rho_t, rng),
            ChannelModel::Clustered { n_paths } => clustered(n_r, n_u, n_paths, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub model_tag: ModelTag,
    pub seed: u64,
}

pub fn gen_iid_rayleigh(n_r: usize, n_u: usize, rng: &mut SimRng) -> ChannelRealization {
    ChannelRealization {
        h: complex_normal_matrix(n_r.max(1), n_u.max(1), rng),
        model_tag: ModelTag::IidRayleigh,
        seed: 0,
    }
}

/// Kronecker-correlated Rayleigh channel `L_r · W · L_tᴴ`.
///
/// `L` are Cholesky factors of the exponential correlation matrices. The
/// distribution of `vec(h)` is `CN(0, R_tᵀ ⊗ R_r)`, the same as with
/// symmetric square roots, and with zero correlation `h == W` draw for draw.
pub fn gen_kronecker(
    n_r: usize,
    n_u: usize,
    rho_r: f64,
    rho_t: f64,
    rng: &mut SimRng,
) -> Result<ChannelRealization, ChannelError> {
    check_dims(n_r, n_u)?;
    check_rho("rho_r", rho_r)?;
    check_rho("rho_t", rho_t)?;
    Ok(ChannelRealization {
        h: kronecker(n_r, n_u, rho_r, rho_t, rng)?,
        model_tag: ModelTag::Kronecker,
        seed: 0,
    })
}

/// Sum of `n_paths` plane waves per user on a half-wavelength ULA.
pub fn gen_clustered(
    n_r: usize,
    n_u: usize,
    n_paths: usize,
    rng: &mut SimRng,
) -> Result<ChannelRealization, ChannelError> {
    check_dims(n_r, n_u)?;
    Ok(ChannelRealization {
        h: clustered(n_r, n_u, n_paths, rng)?,
        model_tag: ModelTag::Clustered,
        seed: 0,
    })
}

/// Exponential correlation matrix `R[i, j] = rho^|i - j|`.
pub fn exp_correlation(n: usize, rho: f64) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| {
        C64::new(rho.powi((i as i64 - j as i64).unsigned_abs() as i32), 0.0)
    })
}

/// ULA steering vector with entries `exp(jπ k sin θ)`.
pub fn steering_vector(n_r: usize, theta: f64) -> Vec<C64> {
    let phase = PI * theta.sin();
    (0..n_r)
        .map(|k| C64::from_polar(1.0, phase * k as f64))
        .collect()
}

fn kronecker(
    n_r: usize,
    n_u: usize,
    rho_r: f64,
    rho_t: f64,
    rng: &mut SimRng,
) -> Result<CMatrix, ChannelError> {
    let w = complex_normal_matrix(n_r, n_u, rng);
    let lr = if rho_r == 0.0 {
        None
    } else {
        Some(exp_correlation(n_r, rho_r).cholesky()?.factor().clone())
    };
    let lt = if rho_t == 0.0 {
        None
    } else {
        Some(exp_correlation(n_u, rho_t).cholesky()?.factor().clone())
    };
    let mut h = match &lr {
        Some(l) => l.matmul(&w)?,
        None => w,
    };
    if let Some(l) = &lt {
        h = h.matmul_hermitian(l)?;
    }
    Ok(h)
}

fn clustered(
    n_r: usize,
    n_u: usize,
    n_paths: usize,
    rng: &mut SimRng,
) -> Result<CMatrix, ChannelError> {
    if n_paths == 0 {
        return Err(ChannelError::Parameter("n_paths must be >= 1".into()));
    }
    // E|g_p|² = 1/n_paths and unit-modulus steering entries give E‖column‖² = n_r.
    let gain_std = (1.0 / n_paths as f64).sqrt();
    let mut h = CMatrix::zeros(n_r, n_u);
    for u in 0..n_u {
        for _ in 0..n_paths {
            let g = complex_normal(rng) * gain_std;
            let theta = rng.random_range(-PI / 2.0..=PI / 2.0);
            for (entry, a) in h.col_mut(u).iter_mut().zip(steering_vector(n_r, theta)) {
                *entry += g * a;
            }
        }
    }
    Ok(h)
}

fn check_dims(n_r: usize, n_u: usize) -> Result<(), ChannelError> {
    if n_r == 0 || n_u == 0 {
        return Err(ChannelError::Parameter(format!(
            "dimensions must be >= 1, got {n_r}x{n_u}"
        )));
    }
    Ok(())
}

fn check_rho(name: &str, rho: f64) -> Result<(), ChannelError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(ChannelError::Parameter(format!(
            "{name} must lie in [0, 1), got {rho}"
        )));
    }
    Ok(())
}

/// A set of channel matrices sharing dimensions and model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub n_r: usize,
    pub n_u: usize,
    pub model_tag: ModelTag,
    pub channels: Vec<CMatrix>,
}

impl ChannelDataset {
    /// Generates `count` realizations, realization `i` seeded with `base_seed + i`.
    pub fn generate(
        model: &ChannelModel,
        n_r: usize,
        n_u: usize,
        count: usize,
        base_seed: u64,
    ) -> Result<Self, ChannelError> {
        use rayon::prelude::*;
        model.validate()?;
        check_dims(n_r, n_u)?;
        let channels = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeded(base_seed.wrapping_add(i as u64));
                model.generate(n_r, n_u, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n_r,
            n_u,
            model_tag: model.tag(),
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ChannelError> {
        let mut header = [0u8; DATASET_HEADER_LEN];
        header[0..4].copy_from_slice(&DATASET_MAGIC);
        header[4..8].copy_from_slice(&DATASET_VERSION.to_le_bytes());
        header[8..12].copy_from_slice(&to_u32(self.n_r)?.to_le_bytes());
        header[12..16].copy_from_slice(&to_u32(self.n_u)?.to_le_bytes());
        header[16..24].copy_from_slice(&(self.channels.len() as u64).to_le_bytes());
        header[24..28].copy_from_slice(&self.model_tag.code().to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.n_r * self.n_u * 16);
        for h in &self.channels {
            if h.shape() != (self.n_r, self.n_u) {
                return Err(ChannelError::Parameter(format!(
                    "realization shape {:?} differs from dataset {}x{}",
                    h.shape(),
                    self.n_r,
                    self.n_u
                )));
            }
            buf.clear();
            for z in h.as_slice() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ChannelError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChannelError> {
        let format = |offset: usize, reason: String| ChannelError::Format {
            offset: offset as u64,
            reason,
        };
        if bytes.len() < DATASET_HEADER_LEN {
            return Err(format(
                bytes.len(),
                format!(
                    "header needs {DATASET_HEADER_LEN} bytes, file has {}",
                    bytes.len()
                ),
            ));
        }
        if bytes[0..4] != DATASET_MAGIC {
            return Err(format(0, "bad magic, expected \"CHDS\"".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != DATASET_VERSION {
            return Err(format(4, format!("unsupported version {version}")));
        }
        let n_r = u32_at(8) as usize;
        let n_u = u32_at(12) as usize;
        if n_r == 0 || n_u == 0 {
            return Err(format(8, format!("zero dimension {n_r}x{n_u}")));
        }
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let model_tag = ModelTag::from_code(u32_at(24))
            .ok_or_else(|| format(24, format!("unknown model tag {}", u32_at(24))))?;

        let per = (n_r as u64) * (n_u as u64) * 16;
        let payload = (bytes.len() - DATASET_HEADER_LEN) as u64;
        let expected = per
            .checked_mul(count)
            .ok_or_else(|| format(16, "count overflows".into()))?;
        if payload != expected {
            let offset = DATASET_HEADER_LEN as u64 + payload.min(expected);
            return Err(ChannelError::Format {
                offset,
                reason: format!(
                    "header declares {count} realizations of {n_r}x{n_u} ({expected} payload bytes), found {payload}"
                ),
            });
        }
        let mut channels = Vec::with_capacity(count as usize);
        let mut off = DATASET_HEADER_LEN;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        for _ in 0..count {
            let mut data = Vec::with_capacity(n_r * n_u);
            for _ in 0..n_r * n_u {
                data.push(C64::new(f64_at(off), f64_at(off + 8)));
                off += 16;
            }
            channels.push(CMatrix::from_col_major(n_r, n_u, data)?);
        }
        Ok(Self {
            n_r,
            n_u,
            model_tag,
            channels,
        })
    }
}

fn to_u32(n: usize) -> Result<u32, ChannelError> {
    u32::try_from(n).map_err(|_| ChannelError::Parameter(format!("dimension {n} exceeds u32")))
}

pub fn save_dataset(ds: &ChannelDataset, path: impl AsRef<Path>) -> Result<(), ChannelError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    ds.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChannelDataset, ChannelError> {
    let bytes = std::fs::read(path)?;
    ChannelDataset::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;

    #[test]
    fn rayleigh_is_deterministic_and_shaped() {
        let a = gen_iid_rayleigh(2, 3, &mut seeded(7));
        let b = gen_iid_rayleigh(2, 3, &mut seeded(7));
        let c = gen_iid_rayleigh(2, 3, &mut seeded(8));
        assert_eq!(a.h.shape(), (2, 3));
        assert_eq!(a, b);
        assert_ne!(a.h, c.h);
    }

    #[test]
    fn rayleigh_sample_statistics() {
        let mut rng = seeded(11);
        let (mut pow, mut cross, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
        let mut n = 0.0;
        for _ in 0..10_000 {
            let h = gen_iid_rayleigh(4, 4, &mut rng).h;
            for z in h.as_slice() {
                pow += z.norm_sqr();
                cross += z.re * z.im;
                re2 += z.re * z.re;
                im2 += z.im * z.im;
                n += 1.0;
            }
        }
        let mean_pow = pow / n;
        assert!((0.95..=1.05).contains(&mean_pow), "mean |h|^2 = {mean_pow}");
        let r = cross / (re2 * im2).sqrt();
        assert!(r.abs() < 0.05, "re/im correlation {r}");
    }

    #[test]
    fn kronecker_zero_correlation_equals_rayleigh() {
        let a = gen_kronecker(3, 5, 0.0, 0.0, &mut seeded(3)).unwrap();
        let b = gen_iid_rayleigh(3, 5, &mut seeded(3));
        assert_eq!(a.h, b.h);
        let c = gen_kronecker(3, 5, 0.4, 0.2, &mut seeded(3)).unwrap();
        let d = gen_kronecker(3, 5, 0.4, 0.2, &mut seeded(3)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn kronecker_rejects_bad_rho() {
        for rho in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                gen_kronecker(2, 2, rho, 0.0, &mut seeded(0)),
                Err(ChannelError::Parameter(_))
            ));
            assert!(gen_kronecker(2, 2, 0.0, rho, &mut seeded(0)).is_err());
        }
    }

    #[test]
    fn kronecker_receive_covariance() {
        let (n_r, n_u, rho) = (4, 4, 0.7);
        let mut acc = CMatrix::zeros(n_r, n_r);
        let mut rng = seeded(21);
        let draws = 10_000;
        for _ in 0..draws {
            let h = gen_kronecker(n_r, n_u, rho, 0.0, &mut rng).unwrap().h;
            acc += &h.matmul_hermitian(&h).unwrap();
        }
        let emp = acc.scale(1.0 / (draws * n_u) as f64);
        let target = exp_correlation(n_r, rho);
        for i in 0..n_r {
            for j in 0..n_r {
                let t = target[(i, j)].re;
                let e = emp[(i, j)];
                assert!(
                    (e.re - t).abs() <= 0.05 * t && e.im.abs() <= 0.05 * t,
                    "R[{i},{j}]: {e} vs {t}"
                );
            }
        }
    }

    #[test]
    fn single_path_columns_have_constant_modulus() {
        let h = gen_clustered(8, 3, 1, &mut seeded(5)).unwrap().h;
        for u in 0..3 {
            let m0 = h[(0, u)].norm();
            for k in 1..8 {
                assert!((h[(k, u)].norm() - m0).abs() < 1e-12);
            }
        }
        assert_eq!(
            gen_clustered(8, 3, 2, &mut seeded(5)).unwrap(),
            gen_clustered(8, 3, 2, &mut seeded(5)).unwrap()
        );
    }

    #[test]
    fn clustered_energy_concentrates_in_angular_domain() {
        // Unitary DFT of each column, computed directly; fraction of energy
        // held by the n_paths strongest bins.
        let (n_r, n_paths) = (32, 2);
        let mut rng = seeded(9);
        let mut frac = 0.0;
        let draws = 100;
        for _ in 0..draws {
            let h = gen_clustered(n_r, 1, n_paths, &mut rng).unwrap().h;
            let col = h.col(0);
            let mut bins: Vec<f64> = (0..n_r)
                .map(|f| {
                    let s: C64 = col
                        .iter()
                        .enumerate()
                        .map(|(k, z)| {
                            z * C64::from_polar(1.0, -2.0 * PI * (f * k) as f64 / n_r as f64)
                        })
                        .sum();
                    s.norm_sqr() / n_r as f64
                })
                .collect();
            let total: f64 = bins.iter().sum();
            bins.sort_by(|a, b| b.partial_cmp(a).unwrap());
            frac += bins[..n_paths].iter().sum::<f64>() / total;
        }
        frac /= draws as f64;
        assert!(frac >= 0.8, "top-bin energy fraction {frac}");
    }

    #[test]
    fn clustered_rejects_zero_paths() {
        assert!(gen_clustered(4, 4, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let ds = ChannelDataset::generate(&ChannelModel::Clustered { n_paths: 3 }, 4, 6, 5, 100)
            .unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), DATASET_HEADER_LEN + 5 * 4 * 6 * 16);
        let back = ChannelDataset::from_bytes(&buf).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.channels.iter().zip(&ds.channels) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    #[test]
    fn dataset_seeds_follow_base_plus_index() {
        let ds = ChannelDataset::generate(&ChannelModel::IidRayleigh, 2, 2, 3, 40).unwrap();
        let third = gen_iid_rayleigh(2, 2, &mut seeded(42)).h;
        assert_eq!(ds.channels[2], third);
    }

    #[test]
    fn empty_file_is_a_format_error() {
        match ChannelDataset::from_bytes(&[]) {
            Err(ChannelError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn header_payload_disagreement_is_a_format_error() {
        let ds = ChannelDataset::generate(&ChannelModel::IidRayleigh, 2, 2, 2, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        match ChannelDataset::from_bytes(&buf) {
            Err(ChannelError::Format { offset, .. }) => {
                assert_eq!(offset, buf.len() as u64)
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bad = Vec::new();
        ds.write_to(&mut bad).unwrap();
        bad[0] = b'X';
        assert!(matches!(
            ChannelDataset::from_bytes(&bad),
            Err(ChannelError::Format { offset: 0, .. })
        ));
    }
}
