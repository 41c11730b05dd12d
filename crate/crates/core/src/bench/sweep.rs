use std::time::Instant;

use rayon::prelude::*;

use super::config::{Algorithm, ExperimentConfig};
use super::BenchError;
use crate::detector::{
    lmmse_detect, lmmse_estimate, ls_estimate, run_joint_full, run_sic_langevin, DetectorError,
};
use crate::linalg::CMatrix;
use crate::prior::ScorePrior;
use crate::random::{complex_normal_matrix, stream};
use crate::signal::{draw_frame, nmse, noise_variance, ser, to_db, Constellation};

/// Ridge of the least-squares baseline; keeps it defined when `p < n_u`.
pub const LS_RIDGE: f64 = 1e-3;

/// Largest tolerated fraction of diverged runs per (algorithm, SNR).
pub const MAX_DIVERGENCE_RATE: f64 = 0.05;

/// Per-trial random streams derived from the trial seed.
pub const STREAM_CHANNEL: u64 = 0;
pub const STREAM_SYMBOLS: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_LANGEVIN: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    /// Linear NMSE statistics over the non-diverged trials.
    pub nmse_median: f64,
    pub nmse_mean: f64,
    pub ser_mean: f64,
    /// Trials that entered the statistics.
    pub trials: usize,
    pub wall_time_ms: f64,
}

impl MetricRecord {
    pub fn nmse_db_median(&self) -> f64 {
        to_db(self.nmse_median)
    }

    pub fn nmse_db_mean(&self) -> f64 {
        to_db(self.nmse_mean)
    }
}

/// Outcome of one algorithm on one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Done { nmse: f64, ser: f64, time_ms: f64 },
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<MetricRecord>,
    /// Diverged runs, parallel to `records`.
    pub diverged: Vec<usize>,
    /// `outcomes[r][t]`: trial `t` of record `r`.
    pub outcomes: Vec<Vec<TrialOutcome>>,
    pub n_trials: usize,
}

impl SweepResult {
    pub fn max_divergence_rate(&self) -> f64 {
        self.diverged
            .iter()
            .map(|&d| d as f64 / self.n_trials as f64)
            .fold(0.0, f64::max)
    }

    pub fn check_divergence(&self) -> Result<(), BenchError> {
        for (rec, &d) in self.records.iter().zip(&self.diverged) {
            let rate = d as f64 / self.n_trials as f64;
            if rate > MAX_DIVERGENCE_RATE {
                return Err(BenchError::DivergenceRate {
                    algorithm: rec.algorithm.name(),
                    snr_db: rec.snr_db,
                    diverged: d,
                    trials: self.n_trials,
                });
            }
        }
        Ok(())
    }

    /// Per-trial outcomes of one (algorithm, SNR) record.
    pub fn trial_values(&self, algorithm: Algorithm, snr_db: f64) -> Option<&[TrialOutcome]> {
        self.records
            .iter()
            .position(|r| r.algorithm == algorithm && r.snr_db == snr_db)
            .map(|i| self.outcomes[i].as_slice())
    }
}

/// Runs every trial with `jobs` worker threads (`0` uses all cores). Records
/// are ordered by SNR, then by the configured algorithm order.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult, BenchError> {
    cfg.validate()?;
    let prior = cfg.build_prior()?;
    let constellation = cfg.constellation()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let per_trial: Vec<Vec<TrialOutcome>> = pool.install(|| {
        (0..cfg.n_trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, prior.as_ref(), &constellation, t))
            .collect::<Result<_, _>>()
    })?;
    Ok(aggregate(cfg, &per_trial))
}

/// Seed of trial `t`.
pub fn trial_seed(cfg: &ExperimentConfig, t: usize) -> u64 {
    cfg.base_seed.wrapping_add(t as u64)
}

/// Channel, transmitted frame and unit-variance noise of trial `t`; the
/// same noise draw is scaled to every SNR.
pub fn trial_realization(
    cfg: &ExperimentConfig,
    constellation: &Constellation,
    t: usize,
) -> Result<(CMatrix, CMatrix, CMatrix, CMatrix), BenchError> {
    let seed = trial_seed(cfg, t);
    let h = cfg
        .channel
        .generate(cfg.n_r, cfg.n_u, &mut stream(seed, STREAM_CHANNEL))?;
    let (x_p, x_d) = draw_frame(
        constellation,
        cfg.n_u,
        cfg.p,
        cfg.d,
        &mut stream(seed, STREAM_SYMBOLS),
    )?;
    let noise = complex_normal_matrix(cfg.n_r, cfg.p + cfg.d, &mut stream(seed, STREAM_NOISE));
    Ok((h, x_p, x_d, noise))
}

/// Outcomes of trial `t`, indexed `[snr][algorithm]` flattened.
fn run_trial(
    cfg: &ExperimentConfig,
    prior: &dyn ScorePrior,
    constellation: &Constellation,
    t: usize,
) -> Result<Vec<TrialOutcome>, BenchError> {
    let (h, x_p, x_d, noise) = trial_realization(cfg, constellation, t)?;
    let x = x_p.hcat(&x_d)?;
    let clean = h.matmul(&x)?;
    let (p, k) = (cfg.p, cfg.p + cfg.d);
    let langevin_seed = trial_seed(cfg, t).wrapping_add(cfg.langevin.seed);
    let mut out = Vec::with_capacity(cfg.snr_grid_db.len() * cfg.algorithms.len());
    for &snr in &cfg.snr_grid_db {
        let s2 = noise_variance(cfg.n_u, snr);
        let y = &clean + &noise.scale(s2.sqrt());
        let y_p = y.col_range(0, p);
        let y_d = y.col_range(p, k);
        for &alg in &cfg.algorithms {
            let start = Instant::now();
            let est: Result<(CMatrix, CMatrix), DetectorError> = match alg {
                Algorithm::Ls => ls_estimate(&y_p, &x_p, LS_RIDGE).and_then(|h_hat| {
                    let x_hat = lmmse_detect(&y_d, &h_hat, s2, constellation)?;
                    Ok((h_hat, x_hat))
                }),
                Algorithm::Lmmse => lmmse_estimate(&y_p, &x_p, s2, prior.entry_variance())
                    .and_then(|h_hat| {
                        let x_hat = lmmse_detect(&y_d, &h_hat, s2, constellation)?;
                        Ok((h_hat, x_hat))
                    }),
                Algorithm::SicLangevin | Algorithm::JointFull => {
                    let run = if alg == Algorithm::SicLangevin {
                        run_sic_langevin
                    } else {
                        run_joint_full
                    };
                    let mut rng = stream(langevin_seed, STREAM_LANGEVIN);
                    run(&y, &x_p, constellation, &cfg.langevin, prior, s2, &mut rng)
                        .map(|e| (e.h_hat, e.x_d_hat))
                }
            };
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            out.push(match est {
                Ok((h_hat, x_hat)) if h_hat.is_finite() => TrialOutcome::Done {
                    nmse: nmse(&h_hat, &h)?,
                    ser: ser(&x_hat, &x_d, constellation)?,
                    time_ms,
                },
                Ok(_) | Err(DetectorError::Diverged { .. }) => TrialOutcome::Diverged,
                Err(e) => return Err(e.into()),
            });
        }
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(cfg: &ExperimentConfig, per_trial: &[Vec<TrialOutcome>]) -> SweepResult {
    let n_alg = cfg.algorithms.len();
    let mut records = Vec::new();
    let mut diverged = Vec::new();
    let mut outcomes = Vec::new();
    for (s, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        for (a, &algorithm) in cfg.algorithms.iter().enumerate() {
            let col: Vec<TrialOutcome> = per_trial.iter().map(|o| o[s * n_alg + a]).collect();
            let mut nmses = Vec::new();
            let (mut ser_sum, mut time) = (0.0, 0.0);
            for o in &col {
                if let TrialOutcome::Done { nmse, ser, time_ms } = *o {
                    nmses.push(nmse);
                    ser_sum += ser;
                    time += time_ms;
                }
            }
            let n = nmses.len();
            let (nmse_median, nmse_mean, ser_mean) = if n == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = nmses.iter().sum::<f64>() / n as f64;
                (median(&mut nmses), mean, ser_sum / n as f64)
            };
            records.push(MetricRecord {
                algorithm,
                snr_db,
                nmse_median,
                nmse_mean,
                ser_mean,
                trials: n,
                wall_time_ms: time,
            });
            diverged.push(col.len() - n);
            outcomes.push(col);
        }
    }
    SweepResult {
        records,
        diverged,
        outcomes,
        n_trials: cfg.n_trials,
    }
}
