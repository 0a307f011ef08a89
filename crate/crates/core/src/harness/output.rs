//! Result and learning-curve records and their CSV / text renderings.
//!
//! Reals are written with 6 significant digits in `%g` style.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRecord {
    pub epoch: usize,
    pub updates: usize,
    pub wall_clock_s: f64,
    pub train_nll: f64,
    pub valid_nll: f64,
    pub lr: f64,
}

/// Final per-timestep NLLs of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub cell: String,
    pub train_nll: f64,
    pub valid_nll: f64,
    pub test_nll: f64,
    pub n: usize,
    pub param_count: usize,
    pub best_lr: f64,
    pub seed: u64,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const TABLE_FILE: &str = "table.txt";
const RESULT_COLUMNS: [&str; 9] = [
    "dataset",
    "cell",
    "train_nll",
    "valid_nll",
    "test_nll",
    "n",
    "param_count",
    "best_lr",
    "seed",
];
const CURVE_COLUMNS: [&str; 6] = ["epoch", "updates", "wall_clock_s", "train_nll", "valid_nll", "lr"];

pub fn curve_file_name(run: &str) -> String {
    let safe: String = run
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("curve_{safe}.csv")
}

/// C `%.6g` formatting.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RESULT_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.cell.clone(),
            fmt_g6(r.train_nll),
            fmt_g6(r.valid_nll),
            fmt_g6(r.test_nll),
            r.n.to_string(),
            r.param_count.to_string(),
            fmt_g6(r.best_lr),
            r.seed.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[LearningCurveRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CURVE_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.updates.to_string(),
            fmt_g6(r.wall_clock_s),
            fmt_g6(r.train_nll),
            fmt_g6(r.valid_nll),
            fmt_g6(r.lr),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    read_csv(path.as_ref())
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<LearningCurveRecord>> {
    read_csv(path.as_ref())
}

/// Plain-text grid: one line per dataset and split, one column per cell kind.
pub fn format_table(rows: &[ResultRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut cells: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    let mean = |dataset: &str, cell: &str, pick: fn(&ResultRow) -> f64| -> Option<f64> {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.cell == cell)
            .map(pick)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let name_width = datasets.iter().map(|d| d.len()).max().unwrap_or(7).max(7);
    let mut out = String::new();
    let _ = write!(out, "{:<name_width$}  {:<5}", "dataset", "split");
    for c in &cells {
        let _ = write!(out, "  {c:>12}");
    }
    out.push('\n');
    for d in &datasets {
        for (label, pick) in [
            ("train", (|r: &ResultRow| r.train_nll) as fn(&ResultRow) -> f64),
            ("test", |r: &ResultRow| r.test_nll),
        ] {
            let _ = write!(out, "{d:<name_width$}  {label:<5}");
            for c in &cells {
                let cell = mean(d, c, pick).map_or_else(|| "-".to_string(), fmt_g6);
                let _ = write!(out, "  {cell:>12}");
            }
            out.push('\n');
        }
    }
    out
}

/// Writes `results.csv`, one `curve_<run>.csv` per run and `table.txt`.
pub fn emit_outputs(
    rows: &[ResultRow],
    curves: &[(String, Vec<LearningCurveRecord>)],
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_results_csv(dir.join(RESULTS_FILE), rows)?;
    for (run, curve) in curves {
        write_curve_csv(dir.join(curve_file_name(run)), curve)?;
    }
    let table = dir.join(TABLE_FILE);
    std::fs::write(&table, format_table(rows)).map_err(|e| Error::io(&table, e))
}
