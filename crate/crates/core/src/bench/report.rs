use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::config::{Algorithm, ExperimentConfig};
use super::sweep::{MetricRecord, SweepResult};
use super::BenchError;
use crate::signal::from_db;

pub const CSV_COLUMNS: &str =
    "algorithm,snr_db,nmse_db_median,nmse_db_mean,ser_mean,trials,wall_time_ms";

/// Values below this are drawn at the floor of a log axis.
const LOG_FLOOR: f64 = 1e-6;

/// Comment block describing a sweep: metric definitions, divergence counts
/// and the full configuration.
pub fn sweep_header(cfg: &ExperimentConfig, result: &SweepResult) -> Vec<String> {
    let mut lines = vec![
        "sicmimo sweep".to_string(),
        "snr_db: per-antenna receive SNR with unit-energy symbols, noise variance n_u / 10^(snr_db/10)"
            .to_string(),
        "nmse: ||H_hat - H||_F^2 / ||H||_F^2 per trial, median and mean over trials, in dB".to_string(),
        "ser: fraction of wrong data symbols, mean over trials".to_string(),
        "trials: runs that did not diverge".to_string(),
    ];
    let div: Vec<String> = result
        .records
        .iter()
        .zip(&result.diverged)
        .map(|(r, d)| format!("{}@{}={d}", r.algorithm.name(), r.snr_db))
        .collect();
    lines.push(format!("diverged: {}", div.join(" ")));
    lines.push("config:".to_string());
    lines.extend(cfg.to_toml().lines().map(str::to_string));
    lines
}

pub fn csv_string(records: &[MetricRecord], header: &[String]) -> Result<String, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Report("no records to write".into()));
    }
    let mut out = String::new();
    for line in header {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            writeln!(out, "# {line}").unwrap();
        }
    }
    out.push_str(CSV_COLUMNS);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.algorithm.name(),
            r.snr_db,
            r.nmse_db_median(),
            r.nmse_db_mean(),
            r.ser_mean,
            r.trials,
            r.wall_time_ms
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_csv(
    records: &[MetricRecord],
    header: &[String],
    path: impl AsRef<Path>,
) -> Result<(), BenchError> {
    let text = csv_string(records, header)?;
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Data rows of a results CSV; `#` lines are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<MetricRecord>, BenchError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == CSV_COLUMNS => {}
        _ => return Err(BenchError::Report("missing CSV column header".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let bad = |what: &str| BenchError::Report(format!("line {}: {what}", n + 1));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |i: usize| f64::from_str(f[i]).map_err(|_| bad("bad number"));
        out.push(MetricRecord {
            algorithm: Algorithm::from_name(f[0]).ok_or_else(|| bad("unknown algorithm"))?,
            snr_db: num(1)?,
            nmse_median: from_db(num(2)?),
            nmse_mean: from_db(num(3)?),
            ser_mean: num(4)?,
            trials: f[5].parse().map_err(|_| bad("bad trial count"))?,
            wall_time_ms: num(6)?,
        });
    }
    if out.is_empty() {
        return Err(BenchError::Report("CSV has no data rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Nmse,
    Ser,
}

impl FromStr for PlotKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "nmse" => Ok(PlotKind::Nmse),
            "ser" => Ok(PlotKind::Ser),
            other => Err(BenchError::Report(format!(
                "unknown plot kind '{other}' (expected nmse or ser)"
            ))),
        }
    }
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Log-y line chart against SNR, one polyline per algorithm.
pub fn render_svg(records: &[MetricRecord], kind: PlotKind) -> Result<String, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Report("no records to plot".into()));
    }
    let mut algs: Vec<Algorithm> = Vec::new();
    for r in records {
        if !algs.contains(&r.algorithm) {
            algs.push(r.algorithm);
        }
    }
    let value = |r: &MetricRecord| match kind {
        PlotKind::Nmse => r.nmse_median,
        PlotKind::Ser => r.ser_mean,
    };
    let points: Vec<(Algorithm, f64, f64)> = records
        .iter()
        .filter(|r| value(r).is_finite())
        .map(|r| (r.algorithm, r.snr_db, value(r).max(LOG_FLOOR).log10()))
        .collect();
    let (x_lo, x_hi) = bounds(records.iter().map(|r| r.snr_db));
    let (y_lo, y_hi) = bounds(points.iter().map(|p| p.2));
    let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 150.0, 30.0, 50.0);
    let px = |x: f64| ml + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (w - ml - mr);
    let py = |y: f64| mt + (y_hi - y) / (y_hi - y_lo) * (h - mt - mb);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    )
    .unwrap();
    let mut decade = y_lo as i32;
    while decade as f64 <= y_hi {
        let y = py(decade as f64);
        writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            x0 - 6.0,
            y + 4.0
        )
        .unwrap();
        decade += 1;
    }
    let mut snrs: Vec<f64> = records.iter().map(|r| r.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    for &snr in &snrs {
        let x = px(snr);
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{snr}</text>"#,
            y1 + 18.0
        )
        .unwrap();
    }
    let label = match kind {
        PlotKind::Nmse => "median NMSE",
        PlotKind::Ser => "mean SER",
    };
    writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">SNR (dB)</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();
    for (i, alg) in algs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|p| p.0 == *alg)
            .map(|p| format!("{:.2},{:.2}", px(p.1), py(p.2)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
        let ly = mt + 16.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 12.0,
            x1 + 36.0,
            x1 + 42.0,
            ly + 4.0,
            alg.name()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

pub fn emit_plot(
    csv_path: impl AsRef<Path>,
    kind: PlotKind,
    out_svg: impl AsRef<Path>,
) -> Result<(), BenchError> {
    let csv_path = csv_path.as_ref();
    let text = std::fs::read_to_string(csv_path).map_err(|source| BenchError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let svg = render_svg(&parse_csv(&text)?, kind)?;
    let out = out_svg.as_ref();
    std::fs::write(out, svg).map_err(|source| BenchError::Io {
        path: out.to_path_buf(),
        source,
    })
}
