//! CSV writers for solver traces and per-step metrics. Floats are written
//! with 17 significant digits so that values round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use jiio_core::solver::{SolverTrace, TraceRow};

use crate::error::{CliError, Result};

pub const TRACE_HEADER: &str = "iter,f_evals,vjp_evals,residual,kkt_norm,cost,wall_ns";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trace CSV text; `wall_ns` is written as 0 unless `wall_clock` is set, so
/// that repeated runs produce identical files.
pub fn trace_csv(rows: &[TraceRow], wall_clock: bool) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let wall = if wall_clock { r.wall_ns } else { 0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            r.f_evals,
            r.vjp_evals,
            fmt_f64(r.residual),
            fmt_f64(r.kkt_norm),
            fmt_f64(r.cost),
            wall
        );
    }
    out
}

pub fn emit_trace_csv(trace: &SolverTrace, path: &Path, wall_clock: bool) -> Result<()> {
    write_file(path, &trace_csv(&trace.rows, wall_clock))
}

/// Parses trace CSV text back into rows.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        _ => {
            return Err(CliError::Parse {
                line: 1,
                message: "missing trace header".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let bad = |what: &str| CliError::Parse {
                line: i + 1,
                message: format!("bad {what} in `{line}`"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("field count"));
            }
            Ok(TraceRow {
                iter: f[0].parse().map_err(|_| bad("iter"))?,
                f_evals: f[1].parse().map_err(|_| bad("f_evals"))?,
                vjp_evals: f[2].parse().map_err(|_| bad("vjp_evals"))?,
                residual: f[3].parse().map_err(|_| bad("residual"))?,
                kkt_norm: f[4].parse().map_err(|_| bad("kkt_norm"))?,
                cost: f[5].parse().map_err(|_| bad("cost"))?,
                wall_ns: f[6].parse().map_err(|_| bad("wall_ns"))?,
            })
        })
        .collect()
}

/// A table with a fixed header, written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// One CSV cell.
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    /// Missing value, written as `NA`.
    Na,
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Na, Cell::Float)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
            Cell::Na => "NA".to_string(),
        }
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.header.len(), "row width must match the header");
        self.rows.push(cells.iter().map(Cell::render).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv())
    }
}

/// Per-step training metrics.
pub fn metrics_table(rows: &[jiio_core::tasks::TrainRow]) -> Table {
    let mut t = Table::new(&["step", "loss", "reg", "f_evals", "vjp_evals"]);
    for r in rows {
        t.push(vec![
            r.step.into(),
            r.loss.into(),
            r.reg.into(),
            r.f_evals.into(),
            r.vjp_evals.into(),
        ]);
    }
    t
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> TraceRow {
        TraceRow {
            iter: i,
            f_evals: i as u64 + 1,
            vjp_evals: 2 * i as u64 + 2,
            residual: 0.1 / (i as f64 + 3.0),
            kkt_norm: std::f64::consts::PI * i as f64,
            cost: f64::NAN,
            wall_ns: 12345,
        }
    }

    #[test]
    fn header_and_first_row_format() {
        let text = trace_csv(&[row(0)], false);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        assert_eq!(
            lines.next(),
            Some("0,1,2,3.3333333333333333e-2,0.0000000000000000e0,NaN,0")
        );
        assert!(trace_csv(&[row(0)], true).ends_with(",12345\n"));
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(trace_csv(&[], false), format!("{TRACE_HEADER}\n"));
    }

    #[test]
    fn hundred_rows_round_trip() {
        let rows: Vec<TraceRow> = (0..100).map(row).collect();
        let text = trace_csv(&rows, true);
        assert_eq!(text.lines().count(), 101);
        let back = parse_trace_csv(&text).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.residual.to_bits(), b.residual.to_bits());
            assert_eq!(a.kkt_norm.to_bits(), b.kkt_norm.to_bits());
            assert!(b.cost.is_nan());
            assert_eq!((a.iter, a.f_evals, a.vjp_evals, a.wall_ns), (b.iter, b.f_evals, b.vjp_evals, b.wall_ns));
        }
    }

    #[test]
    fn table_renders_na() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![Cell::from(3usize), Cell::from(None::<f64>)]);
        assert_eq!(t.to_csv(), "a,b\n3,NA\n");
    }
}
