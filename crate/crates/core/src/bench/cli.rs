use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::ExperimentConfig;
use super::report::{csv_string, emit_plot, sweep_header, PlotKind};
use super::sweep::run_sweep;
use super::BenchError;
use crate::channel::{load_dataset, save_dataset, ChannelDataset};
use crate::prior::{fit_gmm, DomainTransform, GmmOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sicmimo",
    version,
    about = "Joint channel estimation and detection sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw channels of the config's model and size into a .chds dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Seed of realization 0; defaults to the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a GMM channel prior to a .chds dataset.
    FitPrior {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        components: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        block_cols: usize,
        #[arg(long, value_parser = parse_domain, default_value = "unitary_dft2d")]
        domain: DomainTransform,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a sweep and write its CSV (stdout without --out).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for trials; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write zero wall times so reruns give byte-identical files.
        #[arg(long)]
        no_timing: bool,
    },
    /// Render a results CSV as an SVG chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_parser = parse_kind, default_value = "nmse")]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_domain(s: &str) -> Result<DomainTransform, String> {
    match s {
        "identity" => Ok(DomainTransform::Identity),
        "unitary_dft2d" => Ok(DomainTransform::UnitaryDft2D),
        other => Err(format!(
            "unknown domain '{other}' (identity, unitary_dft2d)"
        )),
    }
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

enum Failure {
    Runtime(BenchError),
    Divergence(BenchError),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Runtime(e)
    }
}

/// Parses `args` (program name first), executes the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
        Err(Failure::Divergence(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DIVERGENCE
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Channel errors carry no path; attach it.
fn with_path(path: &Path, e: crate::channel::ChannelError) -> BenchError {
    match e {
        crate::channel::ChannelError::Io(source) => io_err(path)(source),
        other => BenchError::Config(format!("{}: {other}", path.display())),
    }
}

fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::GenData {
            config,
            out,
            count,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.base_seed);
            let ds = ChannelDataset::generate(&cfg.channel, cfg.n_r, cfg.n_u, count, seed)
                .map_err(BenchError::from)?;
            save_dataset(&ds, &out).map_err(|e| with_path(&out, e))?;
            let _ = writeln!(stderr, "wrote {count} channels to {}", out.display());
        }
        Command::FitPrior {
            data,
            out,
            components,
            iters,
            block_cols,
            domain,
            seed,
        } => {
            let ds = load_dataset(&data).map_err(|e| with_path(&data, e))?;
            let opts = GmmOptions {
                components,
                iters,
                block_cols,
                domain,
                seed,
            };
            let fit = fit_gmm(&ds, &opts).map_err(BenchError::from)?;
            fit.prior.save(&out).map_err(|e| match e {
                crate::prior::PriorError::Io(source) => io_err(&out)(source),
                other => other.into(),
            })?;
            let last = fit.loglik_trace.last().copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                stderr,
                "fitted {components}-component prior on {} channels (log-likelihood {last:.4}) to {}",
                ds.len(),
                out.display()
            );
        }
        Command::Run {
            config,
            out,
            seed,
            jobs,
            no_timing,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let mut result = run_sweep(&cfg, jobs)?;
            if no_timing {
                for r in &mut result.records {
                    r.wall_time_ms = 0.0;
                }
            }
            let text = csv_string(&result.records, &sweep_header(&cfg, &result))?;
            match &out {
                Some(path) => std::fs::write(path, &text).map_err(io_err(path))?,
                None => stdout
                    .write_all(text.as_bytes())
                    .map_err(io_err(Path::new("<stdout>")))?,
            }
            result.check_divergence().map_err(Failure::Divergence)?;
        }
        Command::Plot { csv, kind, out } => emit_plot(&csv, kind, &out)?,
    }
    Ok(())
}
