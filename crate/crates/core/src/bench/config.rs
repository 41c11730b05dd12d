use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::channel::{ChannelDataset, ChannelModel};
use crate::detector::LangevinConfig;
use crate::prior::{
    fit_gmm, ColumnProductPrior, DomainTransform, GaussianPrior, GmmOptions, GmmPrior, ScorePrior,
};
use crate::signal::{make_qam, Constellation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SicLangevin,
    JointFull,
    Lmmse,
    Ls,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::SicLangevin,
        Algorithm::JointFull,
        Algorithm::Lmmse,
        Algorithm::Ls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SicLangevin => "sic_langevin",
            Algorithm::JointFull => "joint_full",
            Algorithm::Lmmse => "lmmse",
            Algorithm::Ls => "ls",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Where the channel prior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// i.i.d. CN(0, variance) entries.
    Gaussian {
        #[serde(default = "unit")]
        variance: f64,
    },
    /// GMM text file; relative paths resolve against the config file.
    Gmm { path: PathBuf },
    /// GMM fitted at start-up on `training` fresh draws of the sweep's
    /// channel model, realization `i` seeded with `seed + i`.
    GmmFit {
        training: usize,
        seed: u64,
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default = "one")]
        block_cols: usize,
        #[serde(default = "default_domain")]
        domain: DomainTransform,
    },
}

fn unit() -> f64 {
    1.0
}
fn one() -> usize {
    1
}
fn default_components() -> usize {
    GmmOptions::default().components
}
fn default_iters() -> usize {
    GmmOptions::default().iters
}
fn default_domain() -> DomainTransform {
    DomainTransform::UnitaryDft2D
}
fn default_modulation() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_u: usize,
    pub n_r: usize,
    pub p: usize,
    pub d: usize,
    /// QAM order.
    #[serde(default = "default_modulation")]
    pub modulation: usize,
    pub snr_grid_db: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub channel: ChannelModel,
    pub prior: PriorSpec,
    #[serde(default)]
    pub langevin: LangevinConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving a relative prior path
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        if let PriorSpec::Gmm { path: p } = &mut cfg.prior {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.n_u == 0 || self.n_r == 0 {
            return bad("n_u and n_r must be >= 1".into());
        }
        if self.p == 0 || self.d == 0 {
            return bad("p and d must be >= 1".into());
        }
        if self.n_trials == 0 {
            return bad("n_trials must be >= 1".into());
        }
        if self.snr_grid_db.is_empty() {
            return bad("snr_grid_db is empty".into());
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_grid_db entries must be finite".into());
        }
        if self.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return bad("snr_grid_db must be strictly increasing".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return bad("algorithms lists an entry twice".into());
        }
        make_qam(self.modulation)?;
        self.channel.validate()?;
        self.langevin.validate()?;
        match &self.prior {
            PriorSpec::Gaussian { variance } if !(*variance > 0.0) => {
                bad(format!("prior variance must be positive, got {variance}"))
            }
            PriorSpec::GmmFit {
                training,
                components,
                block_cols,
                ..
            } if *training == 0 || *components == 0 || *block_cols == 0 => {
                bad("gmm_fit needs training, components and block_cols >= 1".into())
            }
            _ => Ok(()),
        }
    }

    pub fn constellation(&self) -> Result<Constellation, BenchError> {
        Ok(make_qam(self.modulation)?)
    }

    /// Builds the channel prior, checking that it fits `n_r`-row blocks.
    pub fn build_prior(&self) -> Result<Arc<dyn ScorePrior>, BenchError> {
        let gmm = match &self.prior {
            PriorSpec::Gaussian { variance } => {
                return Ok(Arc::new(GaussianPrior::white(*variance)?));
            }
            PriorSpec::Gmm { path } => GmmPrior::load(path).map_err(|e| match e {
                crate::prior::PriorError::Io(source) => BenchError::Io {
                    path: path.clone(),
                    source,
                },
                other => other.into(),
            })?,
            PriorSpec::GmmFit {
                training,
                seed,
                components,
                iters,
                block_cols,
                domain,
            } => {
                let ds =
                    ChannelDataset::generate(&self.channel, self.n_r, self.n_u, *training, *seed)?;
                let opts = GmmOptions {
                    components: *components,
                    iters: *iters,
                    block_cols: *block_cols,
                    domain: *domain,
                    seed: *seed,
                };
                fit_gmm(&ds, &opts)?.prior
            }
        };
        let (rows, cols) = gmm.dims();
        if rows != self.n_r || cols > self.n_u {
            return Err(BenchError::Config(format!(
                "prior covers {rows}x{cols} blocks, system is {}x{}",
                self.n_r, self.n_u
            )));
        }
        let product = ColumnProductPrior::single(Arc::new(gmm))?;
        if !product.supports(self.n_r, self.n_r.min(self.n_u)) {
            return Err(BenchError::Config(format!(
                "a {cols}-column prior cannot tile {}-user blocks",
                self.n_r.min(self.n_u)
            )));
        }
        Ok(Arc::new(product))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
n_u = 4
n_r = 2
p = 4
d = 8
snr_grid_db = [0.0, 10.0]
n_trials = 3
base_seed = 7
algorithms = ["ls", "lmmse"]

[channel]
model = "iid_rayleigh"

[prior]
kind = "gaussian"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.modulation, 4);
        assert_eq!(cfg.prior, PriorSpec::Gaussian { variance: 1.0 });
        assert_eq!(cfg.langevin, LangevinConfig::default());
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["n_trails = 3\n", "[langevin]\nstep_sclae = 1.0\n"] {
            let text = format!("{extra}{BASE}");
            let text = if extra.starts_with('[') {
                format!("{BASE}{extra}")
            } else {
                text
            };
            assert!(matches!(
                ExperimentConfig::from_toml(&text),
                Err(BenchError::Config(_))
            ));
        }
        let text = BASE.replace("kind = \"gaussian\"", "kind = \"gaussian\"\nvar = 2.0");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        for (from, to) in [
            ("p = 4", "p = 0"),
            ("d = 8", "d = 0"),
            ("n_trials = 3", "n_trials = 0"),
            ("[0.0, 10.0]", "[10.0, 10.0]"),
            ("[0.0, 10.0]", "[]"),
            ("[\"ls\", \"lmmse\"]", "[\"ls\", \"ls\"]"),
            ("[\"ls\", \"lmmse\"]", "[]"),
        ] {
            let text = BASE.replace(from, to);
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{to}");
        }
        let text = BASE.replace("n_trials = 3", "n_trials = 3\nmodulation = 8");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn large_frame_sizes_are_expressible() {
        let text = BASE.replace("p = 4", "p = 30").replace("d = 8", "d = 50");
        assert!(ExperimentConfig::from_toml(&text).is_ok());
    }

    #[test]
    fn prior_dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ChannelDataset::generate(&ChannelModel::IidRayleigh, 3, 4, 40, 0).unwrap();
        let fit = fit_gmm(
            &ds,
            &GmmOptions {
                components: 2,
                iters: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let path = dir.path().join("p.gmm");
        fit.prior.save(&path).unwrap();
        let text = BASE.replace(
            "kind = \"gaussian\"",
            &format!("kind = \"gmm\"\npath = {:?}", path.display().to_string()),
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(cfg.build_prior(), Err(BenchError::Config(_))));
    }

    #[test]
    fn relative_prior_path_resolves_next_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let text = BASE.replace(
            "kind = \"gaussian\"",
            "kind = \"gmm\"\npath = \"prior.gmm\"",
        );
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(&cfg_path, text).unwrap();
        let cfg = ExperimentConfig::load(&cfg_path).unwrap();
        assert_eq!(
            cfg.prior,
            PriorSpec::Gmm {
                path: dir.path().join("prior.gmm")
            }
        );
    }
}
