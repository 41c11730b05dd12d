//! Diagonal Gaussian-mixture channel prior fitted by EM.
//!
//! Blocks are vectorized (column-major) after an optional unitary 2-D DFT,
//! which moves angularly sparse channels into a domain where a diagonal
//! covariance captures most of the structure. Because the transform is
//! unitary, entry noise of scale σ stays isotropic in the transformed domain
//! and the score maps back through the adjoint transform.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PriorError, ScorePrior};
use crate::channel::ChannelDataset;
use crate::linalg::{CMatrix, C64};
use crate::random::seeded;

/// Lower bound on every fitted per-dimension variance.
pub const VAR_FLOOR: f64 = 1e-6;

const FORMAT_NAME: &str = "sicmimo-gmm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTransform {
    Identity,
    #[serde(rename = "unitary_dft2d")]
    UnitaryDft2D,
}

impl DomainTransform {
    fn tag(self) -> &'static str {
        match self {
            DomainTransform::Identity => "identity",
            DomainTransform::UnitaryDft2D => "unitary_dft2d",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(DomainTransform::Identity),
            "unitary_dft2d" => Some(DomainTransform::UnitaryDft2D),
            _ => None,
        }
    }
}

fn unitary_dft(n: usize) -> CMatrix {
    let s = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |m, k| {
        C64::from_polar(s, -2.0 * PI * ((m * k) % n) as f64 / n as f64)
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Transform {
    kind: DomainTransform,
    f_rows: CMatrix,
    f_cols: CMatrix,
}

impl Transform {
    fn new(kind: DomainTransform, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            f_rows: unitary_dft(rows),
            f_cols: unitary_dft(cols),
        }
    }

    /// `F_r · H · F_c` (the DFT matrices are symmetric).
    fn forward(&self, h: &CMatrix) -> CMatrix {
        match self.kind {
            DomainTransform::Identity => h.clone(),
            DomainTransform::UnitaryDft2D => {
                let t = self.f_rows.matmul(h).expect("rows match");
                if h.cols() == 1 {
                    t
                } else {
                    t.matmul(&self.f_cols).expect("cols match")
                }
            }
        }
    }

    /// Adjoint map `G ↦ F_rᴴ · G · F_cᴴ`.
    fn adjoint(&self, g: &CMatrix) -> CMatrix {
        match self.kind {
            DomainTransform::Identity => g.clone(),
            DomainTransform::UnitaryDft2D => {
                let t = self.f_rows.hermitian_matmul(g).expect("rows match");
                if g.cols() == 1 {
                    t
                } else {
                    t.matmul_hermitian(&self.f_cols).expect("cols match")
                }
            }
        }
    }
}

/// Fitted mixture over `rows × cols` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    means: Vec<Vec<C64>>,
    vars: Vec<Vec<f64>>,
    transform: Transform,
}

impl GmmPrior {
    pub fn new(
        rows: usize,
        cols: usize,
        domain: DomainTransform,
        weights: Vec<f64>,
        means: Vec<Vec<C64>>,
        vars: Vec<Vec<f64>>,
    ) -> Result<Self, PriorError> {
        let k = weights.len();
        let dim = rows * cols;
        if rows == 0 || cols == 0 || k == 0 {
            return Err(PriorError::Parameter("empty mixture".into()));
        }
        if means.len() != k || vars.len() != k {
            return Err(PriorError::Parameter(format!(
                "{k} weights but {} means and {} variance vectors",
                means.len(),
                vars.len()
            )));
        }
        if means.iter().any(|m| m.len() != dim) || vars.iter().any(|v| v.len() != dim) {
            return Err(PriorError::Parameter(format!(
                "component vectors must have {dim} entries"
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(PriorError::Parameter("weights must form a simplex".into()));
        }
        if vars
            .iter()
            .flatten()
            .any(|v| !(*v >= VAR_FLOOR) || !v.is_finite())
        {
            return Err(PriorError::Parameter(format!(
                "variances must be finite and >= {VAR_FLOOR}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            means,
            vars,
            transform: Transform::new(domain, rows, cols),
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn domain(&self) -> DomainTransform {
        self.transform.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<C64>] {
        &self.means
    }

    pub fn vars(&self) -> &[Vec<f64>] {
        &self.vars
    }

    /// Mixture mean in the transformed domain.
    pub fn mean_vector(&self) -> Vec<C64> {
        let mut m = vec![C64::new(0.0, 0.0); self.rows * self.cols];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += b * *w;
            }
        }
        m
    }

    /// Maps a block into the domain the mixture lives in.
    pub fn to_domain(&self, h: &CMatrix) -> Result<CMatrix, PriorError> {
        self.check(h)?;
        Ok(self.transform.forward(h))
    }

    fn check(&self, h: &CMatrix) -> Result<(), PriorError> {
        if h.shape() != (self.rows, self.cols) {
            return Err(PriorError::Dimension {
                expected: (self.rows, self.cols),
                got: h.shape(),
            });
        }
        Ok(())
    }

    /// Per-component log-densities of a transformed sample under noise σ.
    fn component_logits(&self, z: &[C64], sigma_sq: f64, out: &mut Vec<f64>) {
        out.clear();
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            if w == 0.0 {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let mut l = w.ln();
            for ((zi, mi), vi) in z.iter().zip(&self.means[k]).zip(&self.vars[k]) {
                let v = vi + sigma_sq;
                l -= (PI * v).ln() + (zi - mi).norm_sqr() / v;
            }
            out.push(l);
        }
    }

    /// Posterior component weights of the noise-perturbed mixture at `z`.
    fn responsibilities(&self, z: &[C64], sigma_sq: f64) -> Vec<f64> {
        let mut logits = Vec::with_capacity(self.weights.len());
        self.component_logits(z, sigma_sq, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        logits.iter_mut().for_each(|l| *l /= total);
        logits
    }

    pub fn write_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {FORMAT_NAME}");
        let _ = writeln!(s, "version = {FORMAT_VERSION}");
        let _ = writeln!(s, "rows = {}", self.rows);
        let _ = writeln!(s, "cols = {}", self.cols);
        let _ = writeln!(s, "components = {}", self.weights.len());
        let _ = writeln!(s, "domain = {}", self.transform.kind.tag());
        let _ = writeln!(s, "weights = {}", join(self.weights.iter().copied()));
        for (k, (m, v)) in self.means.iter().zip(&self.vars).enumerate() {
            let _ = writeln!(
                s,
                "mean.{k} = {}",
                join(m.iter().flat_map(|z| [z.re, z.im]))
            );
            let _ = writeln!(s, "var.{k} = {}", join(v.iter().copied()));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, PriorError> {
        let mut fields: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PriorError::Format {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            fields.push((i + 1, k.trim(), v.trim()));
        }
        let get = |key: &str| -> Result<(usize, &str), PriorError> {
            fields
                .iter()
                .find(|(_, k, _)| *k == key)
                .map(|(l, _, v)| (*l, *v))
                .ok_or_else(|| PriorError::Format {
                    line: 0,
                    reason: format!("missing key `{key}`"),
                })
        };
        let int = |key: &str| -> Result<usize, PriorError> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| PriorError::Format {
                line,
                reason: format!("`{key}` is not an integer"),
            })
        };
        let (line, fmt) = get("format")?;
        if fmt != FORMAT_NAME {
            return Err(PriorError::Format {
                line,
                reason: format!("unknown format `{fmt}`"),
            });
        }
        let version = int("version")?;
        if version != FORMAT_VERSION as usize {
            return Err(PriorError::Format {
                line: get("version")?.0,
                reason: format!("unsupported version {version}"),
            });
        }
        let rows = int("rows")?;
        let cols = int("cols")?;
        let k = int("components")?;
        let (line, dom) = get("domain")?;
        let domain = DomainTransform::parse(dom).ok_or_else(|| PriorError::Format {
            line,
            reason: format!("unknown domain `{dom}`"),
        })?;
        let dim = rows * cols;
        let weights = floats(get("weights")?, k)?;
        let mut means = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        for c in 0..k {
            let flat = floats(get(&format!("mean.{c}"))?, 2 * dim)?;
            means.push(flat.chunks(2).map(|p| C64::new(p[0], p[1])).collect());
            vars.push(floats(get(&format!("var.{c}"))?, dim)?);
        }
        let known = |key: &str| {
            matches!(
                key,
                "format" | "version" | "rows" | "cols" | "components" | "domain" | "weights"
            ) || key
                .strip_prefix("mean.")
                .or_else(|| key.strip_prefix("var."))
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n < k)
        };
        if let Some((line, key, _)) = fields.iter().find(|(_, key, _)| !known(key)) {
            return Err(PriorError::Format {
                line: *line,
                reason: format!("unknown key `{key}`"),
            });
        }
        Self::new(rows, cols, domain, weights, means, vars)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PriorError> {
        std::fs::write(path, self.write_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PriorError> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn floats((line, v): (usize, &str), expected: usize) -> Result<Vec<f64>, PriorError> {
    let out: Vec<f64> = v
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| PriorError::Format {
            line,
            reason: "malformed number".into(),
        })?;
    if out.len() != expected {
        return Err(PriorError::Format {
            line,
            reason: format!("expected {expected} values, found {}", out.len()),
        });
    }
    Ok(out)
}

/// Score of the noise-perturbed mixture, mapped back to the block domain.
pub fn gmm_score(p: &GmmPrior, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError> {
    p.check(h)?;
    let s2 = sigma * sigma;
    let z = p.transform.forward(h);
    let zs = z.as_slice();
    let resp = p.responsibilities(zs, s2);
    let mut g = CMatrix::zeros(p.rows, p.cols);
    for (k, &gamma) in resp.iter().enumerate() {
        if gamma == 0.0 {
            continue;
        }
        for (((gi, zi), mi), vi) in g
            .as_mut_slice()
            .iter_mut()
            .zip(zs)
            .zip(&p.means[k])
            .zip(&p.vars[k])
        {
            *gi += (mi - zi) * (gamma / (vi + s2));
        }
    }
    Ok(p.transform.adjoint(&g))
}

impl ScorePrior for GmmPrior {
    fn score(&self, h: &CMatrix, sigma: f64) -> Result<CMatrix, PriorError> {
        gmm_score(self, h, sigma)
    }

    fn log_density(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        self.check(h)?;
        let z = self.transform.forward(h);
        let mut logits = Vec::new();
        self.component_logits(z.as_slice(), sigma * sigma, &mut logits);
        Ok(log_sum_exp(&logits))
    }

    fn curvature(&self, h: &CMatrix, sigma: f64) -> Result<f64, PriorError> {
        self.check(h)?;
        let s2 = sigma * sigma;
        let resp = self.responsibilities(self.transform.forward(h).as_slice(), s2);
        Ok(resp
            .iter()
            .zip(&self.vars)
            .map(|(g, v)| g / (v.iter().copied().fold(f64::INFINITY, f64::min) + s2))
            .sum())
    }

    fn entry_variance(&self) -> f64 {
        // Total variance per entry: E|z|² - |E z|² averaged over dimensions
        // (the transform is unitary, so it is the same in the block domain).
        let dim = (self.rows * self.cols) as f64;
        let mbar = self.mean_vector();
        let mut second = 0.0;
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            for (m, v) in self.means[k].iter().zip(&self.vars[k]) {
                second += w * (m.norm_sqr() + v);
            }
        }
        (second - mbar.iter().map(|m| m.norm_sqr()).sum::<f64>()) / dim
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.rows, self.cols))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmOptions {
    pub components: usize,
    pub iters: usize,
    pub block_cols: usize,
    pub domain: DomainTransform,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 8,
            iters: 100,
            block_cols: 1,
            domain: DomainTransform::UnitaryDft2D,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub prior: GmmPrior,
    /// Average per-sample log-likelihood before the first M-step and after each.
    pub loglik_trace: Vec<f64>,
}

impl GmmFit {
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.loglik_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - tol * w[0].abs().max(1.0))
    }
}

/// Non-overlapping `n_r × block_cols` column chunks of every realization.
pub fn extract_blocks(ds: &ChannelDataset, block_cols: usize) -> Result<Vec<CMatrix>, PriorError> {
    if block_cols == 0 || block_cols > ds.n_u {
        return Err(PriorError::Parameter(format!(
            "block_cols must be in 1..={}, got {block_cols}",
            ds.n_u
        )));
    }
    let per = ds.n_u / block_cols;
    let mut out = Vec::with_capacity(ds.channels.len() * per);
    for h in &ds.channels {
        for c in 0..per {
            out.push(h.col_range(c * block_cols, (c + 1) * block_cols));
        }
    }
    Ok(out)
}

pub fn fit_gmm(ds: &ChannelDataset, opts: &GmmOptions) -> Result<GmmFit, PriorError> {
    if ds.is_empty() {
        return Err(PriorError::EmptyDataset);
    }
    fit_gmm_blocks(&extract_blocks(ds, opts.block_cols)?, opts)
}

/// EM on equally shaped blocks with k-means++ seeding.
pub fn fit_gmm_blocks(blocks: &[CMatrix], opts: &GmmOptions) -> Result<GmmFit, PriorError> {
    let first = blocks.first().ok_or(PriorError::EmptyDataset)?;
    let (rows, cols) = first.shape();
    if let Some(b) = blocks.iter().find(|b| b.shape() != (rows, cols)) {
        return Err(PriorError::Dimension {
            expected: (rows, cols),
            got: b.shape(),
        });
    }
    let k = opts.components;
    let n = blocks.len();
    if k == 0 {
        return Err(PriorError::Parameter("components must be >= 1".into()));
    }
    if k > n {
        return Err(PriorError::TooManyComponents { k, n });
    }
    let transform = Transform::new(opts.domain, rows, cols);
    let data: Vec<Vec<C64>> = blocks
        .iter()
        .map(|b| transform.forward(b).into_vec())
        .collect();
    let dim = rows * cols;

    let mut global_mean = vec![C64::new(0.0, 0.0); dim];
    for z in &data {
        for (m, x) in global_mean.iter_mut().zip(z) {
            *m += x;
        }
    }
    global_mean.iter_mut().for_each(|m| *m /= n as f64);
    let global_var: Vec<f64> = (0..dim)
        .map(|d| {
            let v = data
                .iter()
                .map(|z| (z[d] - global_mean[d]).norm_sqr())
                .sum::<f64>()
                / n as f64;
            v.max(VAR_FLOOR)
        })
        .collect();

    let mut state = Mixture {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(&data, k, opts.seed),
        vars: vec![global_var; k],
    };

    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::with_capacity(opts.iters + 1);
    for _ in 0..opts.iters {
        trace.push(state.e_step(&data, &mut resp));
        state.m_step(&data, &resp);
    }
    trace.push(state.e_step(&data, &mut resp));
    let fit = GmmFit {
        prior: GmmPrior::new(
            rows,
            cols,
            opts.domain,
            normalize(state.weights),
            state.means,
            state.vars,
        )?,
        loglik_trace: trace,
    };
    debug_assert!(fit.is_monotone(1e-9), "EM log-likelihood decreased");
    Ok(fit)
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

struct Mixture {
    weights: Vec<f64>,
    means: Vec<Vec<C64>>,
    vars: Vec<Vec<f64>>,
}

impl Mixture {
    /// Fills responsibilities and returns the average log-likelihood.
    fn e_step(&self, data: &[Vec<C64>], resp: &mut [f64]) -> f64 {
        let k = self.weights.len();
        let norms: Vec<f64> = (0..k)
            .map(|c| {
                if self.weights[c] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.weights[c].ln() - self.vars[c].iter().map(|v| (PI * v).ln()).sum::<f64>()
                }
            })
            .collect();
        let mut total = 0.0;
        for (i, z) in data.iter().enumerate() {
            let r = &mut resp[i * k..(i + 1) * k];
            for c in 0..k {
                r[c] = if norms[c] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    norms[c]
                        - z.iter()
                            .zip(&self.means[c])
                            .zip(&self.vars[c])
                            .map(|((x, m), v)| (x - m).norm_sqr() / v)
                            .sum::<f64>()
                };
            }
            let lse = log_sum_exp(r);
            total += lse;
            r.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        total / data.len() as f64
    }

    fn m_step(&mut self, data: &[Vec<C64>], resp: &[f64]) {
        let k = self.weights.len();
        let n = data.len();
        let dim = data[0].len();
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            self.weights[c] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            let mut mean = vec![C64::new(0.0, 0.0); dim];
            for (i, z) in data.iter().enumerate() {
                let g = resp[i * k + c];
                if g == 0.0 {
                    continue;
                }
                for (m, x) in mean.iter_mut().zip(z) {
                    *m += x * g;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for (i, z) in data.iter().enumerate() {
                let g = resp[i * k + c];
                if g == 0.0 {
                    continue;
                }
                for ((v, x), m) in var.iter_mut().zip(z).zip(&mean) {
                    *v += g * (x - m).norm_sqr();
                }
            }
            // Constrained maximizer of -log v - s/v over v >= floor.
            var.iter_mut().for_each(|v| *v = (*v / nk).max(VAR_FLOOR));
            self.means[c] = mean;
            self.vars[c] = var;
        }
    }
}

fn kmeans_pp(data: &[Vec<C64>], k: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = seeded(seed);
    let dist = |a: &[C64], b: &[C64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
    };
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|z| dist(z, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[idx].clone();
        for (d, z) in d2.iter_mut().zip(data) {
            *d = d.min(dist(z, &c));
        }
        centers.push(c);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::prior::gaussian::GaussianPrior;
    use crate::prior::testutil::{fd_wirtinger, max_rel_err};
    use crate::random::{complex_normal, complex_normal_matrix};

    fn toy_dataset(count: usize) -> ChannelDataset {
        ChannelDataset::generate(&ChannelModel::Clustered { n_paths: 2 }, 4, 2, count, 7).unwrap()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let ds = toy_dataset(300);
        let opts = GmmOptions {
            components: 1,
            iters: 3,
            block_cols: 2,
            domain: DomainTransform::Identity,
            seed: 1,
        };
        let fit = fit_gmm(&ds, &opts).unwrap();
        let blocks = extract_blocks(&ds, 2).unwrap();
        let n = blocks.len() as f64;
        for d in 0..8 {
            let mean: C64 = blocks.iter().map(|b| b.as_slice()[d]).sum::<C64>() / n;
            let var = blocks
                .iter()
                .map(|b| (b.as_slice()[d] - mean).norm_sqr())
                .sum::<f64>()
                / n;
            assert!((fit.prior.means()[0][d] - mean).norm() < 1e-10);
            assert!((fit.prior.vars()[0][d] - var).abs() < 1e-10);
        }
        assert_eq!(fit.prior.weights(), &[1.0]);
    }

    #[test]
    fn recovers_known_mixture_weights() {
        let mut rng = seeded(2);
        let centers = [C64::new(3.0, 0.0), C64::new(-3.0, 1.0)];
        let blocks: Vec<CMatrix> = (0..4000)
            .map(|_| {
                let c = if rng.random_bool(0.3) { 0 } else { 1 };
                CMatrix::from_fn(3, 1, |_, _| centers[c] + complex_normal(&mut rng) * 0.5)
            })
            .collect();
        let opts = GmmOptions {
            components: 2,
            iters: 50,
            block_cols: 1,
            domain: DomainTransform::Identity,
            seed: 3,
        };
        let fit = fit_gmm_blocks(&blocks, &opts).unwrap();
        let mut w = fit.prior.weights().to_vec();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            (w[0] - 0.3).abs() < 0.05 && (w[1] - 0.7).abs() < 0.05,
            "{w:?}"
        );
        assert!(fit.is_monotone(1e-12));
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let ds = toy_dataset(400);
        for domain in [DomainTransform::Identity, DomainTransform::UnitaryDft2D] {
            for k in [2, 5, 12] {
                let fit = fit_gmm(
                    &ds,
                    &GmmOptions {
                        components: k,
                        iters: 40,
                        block_cols: 1,
                        domain,
                        seed: k as u64,
                    },
                )
                .unwrap();
                assert!(fit.is_monotone(1e-12), "{:?}", fit.loglik_trace);
            }
        }
    }

    #[test]
    fn fit_errors() {
        let empty = ChannelDataset {
            n_r: 2,
            n_u: 2,
            model_tag: crate::channel::ModelTag::IidRayleigh,
            channels: vec![],
        };
        assert!(matches!(
            fit_gmm(&empty, &GmmOptions::default()),
            Err(PriorError::EmptyDataset)
        ));
        let ds = toy_dataset(3);
        let opts = GmmOptions {
            components: 7,
            block_cols: 1,
            ..GmmOptions::default()
        };
        assert!(matches!(
            fit_gmm(&ds, &opts),
            Err(PriorError::TooManyComponents { k: 7, n: 6 })
        ));
    }

    fn fitted(domain: DomainTransform, k: usize) -> GmmPrior {
        fit_gmm(
            &toy_dataset(500),
            &GmmOptions {
                components: k,
                iters: 30,
                block_cols: 2,
                domain,
                seed: 4,
            },
        )
        .unwrap()
        .prior
    }

    #[test]
    fn single_component_score_equals_gaussian() {
        let g = fitted(DomainTransform::Identity, 1);
        // Make it isotropic so it is exactly a GaussianPrior.
        let v = 0.8;
        let iso = GmmPrior::new(
            4,
            2,
            DomainTransform::Identity,
            vec![1.0],
            g.means().to_vec(),
            vec![vec![v; 8]],
        )
        .unwrap();
        let mean = CMatrix::from_col_major(4, 2, g.means()[0].clone()).unwrap();
        let gp = GaussianPrior::new(mean, v).unwrap();
        let h = complex_normal_matrix(4, 2, &mut seeded(5));
        for sigma in [0.0, 0.3, 2.0] {
            let a = iso.score(&h, sigma).unwrap();
            let b = gp.score(&h, sigma).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn finite_difference_agreement() {
        let mut rng = seeded(6);
        for domain in [DomainTransform::Identity, DomainTransform::UnitaryDft2D] {
            let p = fitted(domain, 6);
            for _ in 0..30 {
                let h = complex_normal_matrix(4, 2, &mut rng);
                let sigma = rng.random_range(0.1..1.0);
                let analytic = p.score(&h, sigma).unwrap();
                let numeric = fd_wirtinger(&h, 1e-5, |x| p.log_density(x, sigma).unwrap());
                let err = max_rel_err(&analytic, &numeric, 1e-2);
                assert!(err < 1e-5, "{domain:?}: {err}");
            }
        }
    }

    #[test]
    fn dominant_noise_limit() {
        let p = fitted(DomainTransform::UnitaryDft2D, 4);
        let vmax = p.vars().iter().flatten().copied().fold(0.0, f64::max);
        let sigma = (1e3 * vmax).sqrt();
        let mbar = CMatrix::from_col_major(4, 2, p.mean_vector()).unwrap();
        // mean_vector is in the transformed domain; map back.
        let mbar = p.transform.adjoint(&mbar);
        let h = complex_normal_matrix(4, 2, &mut seeded(7)).scale(3.0);
        let got = p.score(&h, sigma).unwrap();
        let expect = mbar.try_sub(&h).unwrap().scale(1.0 / (sigma * sigma));
        let rel = got.try_sub(&expect).unwrap().fro_norm() / expect.fro_norm();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn dimension_mismatch() {
        let p = fitted(DomainTransform::Identity, 2);
        assert!(matches!(
            p.score(&CMatrix::zeros(4, 3), 0.1),
            Err(PriorError::Dimension { .. })
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = fitted(DomainTransform::UnitaryDft2D, 3);
        let back = GmmPrior::parse_text(&p.write_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn text_format_errors() {
        let p = fitted(DomainTransform::Identity, 2);
        let text = p.write_text();
        let bad_key = format!("{text}bogus = 1\n");
        assert!(matches!(
            GmmPrior::parse_text(&bad_key),
            Err(PriorError::Format { .. })
        ));
        let missing = text.replace("var.1", "var.x");
        assert!(GmmPrior::parse_text(&missing).is_err());
        let short = text.replace("components = 2", "components = 3");
        assert!(GmmPrior::parse_text(&short).is_err());
        assert!(GmmPrior::parse_text("domain = weird").is_err());
    }
}
