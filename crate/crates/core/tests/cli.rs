use std::path::Path;
use std::process::{Command, Output};

fn sicmimo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicmimo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

const TOY: &str = r#"
n_u = 4
n_r = 2
p = 4
d = 8
snr_grid_db = [0.0, 10.0]
n_trials = 16
base_seed = 3
algorithms = ["sic_langevin", "joint_full", "lmmse", "ls"]

[channel]
model = "clustered"
n_paths = 2

[prior]
kind = "gmm"
path = "prior.gmm"

[langevin]
n_levels = 4
steps_per_level = 5
n_outer = 2
"#;

fn rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn gen_fit_run_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("toy.toml"), TOY).unwrap();

    let out = sicmimo(
        &[
            "gen-data",
            "--config",
            "toy.toml",
            "--count",
            "200",
            "--out",
            "train.chds",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bytes = std::fs::read(d.join("train.chds")).unwrap();
    assert_eq!(&bytes[..4], b"CHDS");
    assert_eq!(bytes.len(), 32 + 200 * 2 * 4 * 16);

    let out = sicmimo(
        &[
            "fit-prior",
            "--data",
            "train.chds",
            "--components",
            "3",
            "--iters",
            "20",
            "--out",
            "prior.gmm",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = sicmimo(
        &[
            "run", "--config", "toy.toml", "--out", "res.csv", "--jobs", "2",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(d.join("res.csv")).unwrap();
    assert!(csv.contains("# snr_db:"));
    let data = rows(&csv);
    assert_eq!(
        data[0],
        "algorithm,snr_db,nmse_db_median,nmse_db_mean,ser_mean,trials,wall_time_ms"
    );
    assert_eq!(data.len(), 1 + 2 * 4);

    for kind in ["nmse", "ser"] {
        let svg = format!("{kind}.svg");
        let out = sicmimo(
            &["plot", "--csv", "res.csv", "--kind", kind, "--out", &svg],
            d,
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = std::fs::read_to_string(d.join(&svg)).unwrap();
        assert_eq!(text.matches("<polyline").count(), 4);
    }
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = TOY.replace(
        "kind = \"gmm\"\npath = \"prior.gmm\"",
        "kind = \"gaussian\"",
    );
    std::fs::write(d.join("toy.toml"), cfg).unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = sicmimo(
            &["run", "--config", "toy.toml", "--jobs", jobs, "--no-timing"],
            d,
        );
        assert_eq!(out.status.code(), Some(0));
        outputs.push(String::from_utf8(out.stdout).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let out = sicmimo(
        &["run", "--config", "toy.toml", "--seed", "4", "--no-timing"],
        d,
    );
    assert_ne!(
        rows(&String::from_utf8(out.stdout).unwrap()),
        rows(&outputs[0])
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = sicmimo(&["run", "--config", "missing.toml"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    assert_eq!(sicmimo(&["launch"], d).status.code(), Some(1));
    assert_eq!(
        sicmimo(&["run", "--config", "x", "--frobnicate"], d)
            .status
            .code(),
        Some(1)
    );

    std::fs::write(d.join("typo.toml"), TOY.replace("n_trials", "n_trails")).unwrap();
    let out = sicmimo(&["run", "--config", "typo.toml"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_trails"));

    let runaway = TOY
        .replace(
            "kind = \"gmm\"\npath = \"prior.gmm\"",
            "kind = \"gaussian\"",
        )
        .replace(
            "n_outer = 2",
            "n_outer = 2\nstep_scale = 1e6\nstep_clamp = 1e6",
        );
    std::fs::write(d.join("runaway.toml"), runaway).unwrap();
    let out = sicmimo(&["run", "--config", "runaway.toml", "--out", "r.csv"], d);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    // The CSV is still written so the failure can be inspected.
    assert!(d.join("r.csv").exists());
}

#[test]
fn shipped_config_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/low_rank.toml");
    let cfg = sicmimo::bench::ExperimentConfig::load(path).unwrap();
    assert_eq!((cfg.n_u, cfg.n_r, cfg.p, cfg.d), (8, 4, 16, 40));
    assert_eq!(cfg.langevin, sicmimo::detector::LangevinConfig::default());
}
