//! CSV emission for run logs, plot series and phase matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use trcomp::RunRecord;

use crate::error::{CliError, Result};

pub const RUN_HEADER: &str = "iter,time_s,f,eps_omega,eps_gamma,grad_norm,step,beta";

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// The per-iteration log. With `timing` off the `time_s` column is left
/// empty so that reruns produce identical bytes.
pub fn format_run_csv(rec: &RunRecord, timing: bool) -> String {
    let mut out = String::from(RUN_HEADER);
    out.push('\n');
    for r in &rec.iters {
        let t = if timing { num(r.time_s) } else { String::new() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            t,
            num(r.f),
            num(r.eps_omega),
            opt(r.eps_gamma),
            opt(r.grad_norm),
            opt(r.step),
            opt(r.beta)
        );
    }
    out
}

pub fn write_run_csv(path: &Path, rec: &RunRecord, timing: bool) -> Result<()> {
    fs::write(path, format_run_csv(rec, timing)).map_err(|e| CliError::io(path, e))
}

pub fn format_phase_csv(extents: &[usize], samples: &[usize], counts: &[Vec<usize>]) -> String {
    let mut out = String::from("n");
    for m in samples {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for (n, row) in extents.iter().zip(counts) {
        let _ = write!(out, "{n}");
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Error curves of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub time: Vec<(f64, f64)>,
    pub iter: Vec<(usize, f64)>,
}

impl PlotSeries {
    pub fn from_record(rec: &RunRecord) -> Self {
        PlotSeries {
            time: rec.iters.iter().map(|r| (r.time_s, r.eps_omega)).collect(),
            iter: rec.iters.iter().map(|r| (r.iter, r.eps_omega)).collect(),
        }
    }
}

fn plot_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}_time.csv")),
        PathBuf::from(format!("{s}_iter.csv")),
    )
}

/// Writes `<stem>_time.csv` (`time_s,eps_omega`) and `<stem>_iter.csv`
/// (`iter,eps_omega`).
pub fn emit_plotdata(rec: &RunRecord, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    if rec.iters.is_empty() {
        return Err(CliError::Config("empty run record".into()));
    }
    let (tp, ip) = plot_paths(stem);
    let mut t = String::from("time_s,eps_omega\n");
    let mut i = String::from("iter,eps_omega\n");
    for r in &rec.iters {
        let _ = writeln!(t, "{},{}", num(r.time_s), num(r.eps_omega));
        let _ = writeln!(i, "{},{}", r.iter, num(r.eps_omega));
    }
    fs::write(&tp, t).map_err(|e| CliError::io(&tp, e))?;
    fs::write(&ip, i).map_err(|e| CliError::io(&ip, e))?;
    Ok((tp, ip))
}

fn parse_field(s: &str, path: &Path, line: usize) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| CliError::Parse {
        path: path.into(),
        line,
        msg: format!("bad number '{s}'"),
    })
}

fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (a, b) = l.split_once(',').ok_or_else(|| CliError::Parse {
                path: path.into(),
                line: i + 1,
                msg: "expected two fields".into(),
            })?;
            Ok((parse_field(a, path, i + 1)?, parse_field(b, path, i + 1)?))
        })
        .collect()
}

pub fn read_plotdata(stem: &Path) -> Result<PlotSeries> {
    let (tp, ip) = plot_paths(stem);
    Ok(PlotSeries {
        time: read_pairs(&tp)?,
        iter: read_pairs(&ip)?
            .into_iter()
            .map(|(i, e)| (i as usize, e))
            .collect(),
    })
}
