//! CSV emission of solutions, iteration histories, and sweep tables.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so re-parsing a file
//! reproduces the values exactly and identical runs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::mesh::Grid;
use crate::nonlinearity::KirchhoffTable;
use crate::problems::RunReport;

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "".into()
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e16) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// `solution.csv`: coordinates and the final `(s, u, w)` triple per cell.
pub fn emit_solution(path: &Path, grid: &Grid, s: &[f64], u: &[f64], w: &[f64]) -> Result<()> {
    let mut rows = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        let c = grid.cell_center(k);
        let mut row = vec![fmt_f64(c[0])];
        if grid.dim == 2 {
            row.push(fmt_f64(c[1]));
        }
        row.extend([fmt_f64(s[k]), fmt_f64(u[k]), fmt_f64(w[k])]);
        rows.push(row);
    }
    let header = if grid.dim == 2 { "x,y,s,u,w" } else { "x,s,u,w" };
    write_csv(path, header, &rows)
}

/// Generic per-cell field export: coordinates and one value column.
pub fn emit_field(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    let mut rows = Vec::with_capacity(values.len());
    for (k, &v) in values.iter().enumerate() {
        let c = grid.cell_center(k);
        let mut row = vec![fmt_f64(c[0])];
        if grid.dim == 2 {
            row.push(fmt_f64(c[1]));
        }
        row.push(fmt_f64(v));
        rows.push(row);
    }
    let header = if grid.dim == 2 { "x,y,value" } else { "x,value" };
    write_csv(path, header, &rows)
}

/// `iterations.csv`: one row per time step with the contraction diagnostics.
pub fn emit_iterations(path: &Path, report: &RunReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .steps
        .iter()
        .enumerate()
        .map(|(n, r)| {
            vec![
                format!("{}", n + 1),
                format!("{}", r.iterations),
                format!("{}", r.converged),
                format!("{}", r.diverged),
                r.alpha.map(fmt_f64).unwrap_or_default(),
                r.order_p.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, "step,iterations,converged,diverged,alpha,order_p", &rows)
}

/// `history.csv`: one row per linearization iteration of every step.
pub fn emit_history(path: &Path, report: &RunReport) -> Result<()> {
    let mut rows = Vec::new();
    for (n, r) in report.steps.iter().enumerate() {
        for i in 0..r.elin_history.len() {
            rows.push(vec![
                format!("{}", n + 1),
                format!("{}", i + 1),
                fmt_f64(r.elin_history[i]),
                fmt_f64(r.efix_history[i]),
                fmt_f64(r.eta_upper_history[i]),
                fmt_f64(r.eta_lower_history[i]),
                r.m_history.get(i).map(|&m| fmt_f64(m)).unwrap_or_default(),
            ]);
        }
    }
    write_csv(path, "step,iter,elin,efix,eta_upper,eta_lower,m", &rows)
}

/// One row of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub scheme: String,
    pub h: f64,
    pub tau: f64,
    pub avg_iterations: f64,
    pub converged: bool,
    pub diverged: bool,
    pub alpha: Option<f64>,
    /// Populated only when timing output is requested (breaks byte determinism).
    pub wall_secs: Option<f64>,
}

pub fn emit_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scheme.clone(),
                fmt_f64(r.h),
                fmt_f64(r.tau),
                fmt_f64(r.avg_iterations),
                format!("{}", r.converged),
                format!("{}", r.diverged),
                r.alpha.map(fmt_f64).unwrap_or_default(),
                r.wall_secs.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, "scheme,h,tau,avg_iterations,converged,diverged,alpha,wall_secs", &out)
}

/// Kirchhoff transform table export. The parametric `(p, u, phi)` columns and the
/// splitting `(s, b, B)` columns have independent lengths; shorter columns are padded
/// with empty cells.
pub fn emit_kirchhoff(path: &Path, table: &KirchhoffTable) -> Result<()> {
    let n = table.p_grid.len().max(table.s_grid.len());
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let pick = |xs: &Vec<f64>| xs.get(k).map(|&v| fmt_f64(v)).unwrap_or_default();
        rows.push(vec![
            pick(&table.p_grid),
            pick(&table.u_vals),
            pick(&table.phi_vals),
            pick(&table.s_grid),
            pick(&table.b_vals),
            pick(&table.big_b_vals),
        ]);
    }
    write_csv(path, "p,u,phi,s,b,B", &rows)
}

/// Parses a CSV produced by this module back into header and float rows (empty cells
/// become NaN).
pub fn read_csv(path: &Path) -> Result<(String, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        rows.push(line.split(',').map(|c| c.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}
