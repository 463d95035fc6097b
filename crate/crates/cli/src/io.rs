//! CSV exports.
//!
//! Grids are written row-major (x fastest, one text row per depth row) under
//! a single header line holding `nx,nz,dx,dz`. Floats use Rust's shortest
//! round-trip formatting so identical values give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nfinv_core::dcr_forward::DcrSurvey;
use nfinv_core::inversion::InversionResult;
use nfinv_core::tomo_forward::CrossholeSurvey;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), nx * nz, "grid values must cover nx * nz cells");
        Self { nx, nz, dx, dz, values }
    }

    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<(), CliError> {
    let mut s = String::with_capacity(grid.values.len() * 12);
    writeln!(s, "{},{},{},{}", grid.nx, grid.nz, grid.dx, grid.dz).unwrap();
    for row in grid.values.chunks(grid.nx) {
        join_into(&mut s, row);
    }
    write_text(path, &s)
}

fn join_into(s: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s.push('\n');
}

pub fn read_grid(path: &Path) -> Result<Grid, CliError> {
    let text = read_text(path)?;
    let bad = |message: String| CliError::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    if header.len() != 4 {
        return Err(bad(format!("header must be nx,nz,dx,dz, got {} fields", header.len())));
    }
    let nx: usize = header[0].trim().parse().map_err(|e| bad(format!("nx: {e}")))?;
    let nz: usize = header[1].trim().parse().map_err(|e| bad(format!("nz: {e}")))?;
    let dx: f64 = header[2].trim().parse().map_err(|e| bad(format!("dx: {e}")))?;
    let dz: f64 = header[3].trim().parse().map_err(|e| bad(format!("dz: {e}")))?;
    let mut values = Vec::with_capacity(nx * nz);
    for (r, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", r + 1)))?;
        if row.len() != nx {
            return Err(bad(format!("row {} has {} values, expected {nx}", r + 1, row.len())));
        }
        values.extend(row);
    }
    if values.len() != nx * nz || nx == 0 {
        return Err(bad(format!("expected {nz} rows of {nx} values")));
    }
    Ok(Grid { nx, nz, dx, dz, values })
}

/// Generic numeric table.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        join_into(&mut s, &row);
    }
    write_text(path, &s)
}

/// Travel times and uncertainties, converted from s to ms.
pub fn write_tomo_data(path: &Path, survey: &CrossholeSurvey, times_s: &[f64], uncertainty_s: &[f64]) -> Result<(), CliError> {
    let rows = survey
        .pairs()
        .zip(times_s.iter().zip(uncertainty_s))
        .map(|((src, rcv), (t, u))| vec![src.0, src.1, rcv.0, rcv.1, t * 1e3, u * 1e3]);
    write_table(path, &["src_x", "src_z", "rcv_x", "rcv_z", "time_ms", "uncertainty_ms"], rows)
}

pub fn write_dcr_data(path: &Path, survey: &DcrSurvey, volts: &[f64], uncertainty: &[f64]) -> Result<(), CliError> {
    let x = &survey.electrodes;
    let rows = survey
        .quadrupoles()
        .into_iter()
        .zip(volts.iter().zip(uncertainty))
        .map(|((a, b, m, n), (v, u))| vec![x[a], x[b], x[m], x[n], *v, *u]);
    write_table(path, &["A_x", "B_x", "M_x", "N_x", "dV_volts", "uncertainty_volts"], rows)
}

/// One row per epoch/iteration: misfit, β and φ_m of the model entering it.
pub fn write_history(path: &Path, result: &InversionResult) -> Result<(), CliError> {
    let rows = (0..result.misfit_history.len()).map(|i| {
        vec![
            (i + 1) as f64,
            result.misfit_history[i],
            result.beta_history[i],
            result.regularization_history[i],
        ]
    });
    write_table(path, &["epoch", "phi_d", "beta", "phi_m"], rows)
}

pub fn write_spectrum(path: &Path, singular_values: &[f64]) -> Result<(), CliError> {
    let rows = singular_values.iter().enumerate().map(|(i, s)| vec![(i + 1) as f64, *s]);
    write_table(path, &["index", "singular_value"], rows)
}

pub fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Every `.csv` below `dir`, sorted, as paths relative to `dir`.
pub fn list_csv(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::io(format!("listing {}", d.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(format!("listing {}", d.display()), e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(dir).expect("walked below dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}
