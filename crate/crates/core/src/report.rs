//! CSV and JSON writers shared by the reports and the command-line front end.
//!
//! Field and control matrices are written time-major: one row per time level (fields)
//! or per cell (controls, switching functions), led by the time coordinate.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{Control, Field, SpaceTimeGrid};
use crate::problem::SwitchingFunction;

/// One CSV row per element with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn matrix_csv(header: &[String], times: impl Iterator<Item = f64>, rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, row) in times.zip(rows) {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `t, x_1, ..., x_n` over time levels `0..=n_t`.
pub fn field_csv(f: &Field) -> String {
    let grid = f.grid;
    let mut header = vec!["t".to_string()];
    header.extend((1..=grid.n_x).map(|i| format!("x={}", grid.x(i))));
    matrix_csv(
        &header,
        (0..=grid.n_t).map(|k| grid.t(k)),
        f.values.rows().into_iter().map(|r| r.to_vec()),
    )
}

fn cellwise_csv(grid: &SpaceTimeGrid, values: &Array2<f64>, prefix: &str) -> String {
    let mut header = vec!["t_left".to_string()];
    header.extend((0..values.nrows()).map(|j| format!("{prefix}_{j}")));
    matrix_csv(
        &header,
        (0..grid.n_t).map(|c| grid.t(c)),
        values.columns().into_iter().map(|c| c.to_vec()),
    )
}

/// `t_left, u_0, ..., u_{m-1}` over cells.
pub fn control_csv(u: &Control) -> String {
    cellwise_csv(&u.grid, &u.values, "u")
}

pub fn switching_csv(s: &SwitchingFunction) -> String {
    cellwise_csv(&s.grid, &s.values, "sigma")
}
