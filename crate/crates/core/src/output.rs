//! On-disk artifacts: the time-series and profile CSV files, the bulk
//! summary JSON, and ring-averaged spectra at configured heights.
//!
//! Every numeric column is printed with 17 significant digits, so a value
//! read back from disk reproduces the original double bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::{self, BulkQuantities, ProfileSet};
use crate::dynamics::State;
use crate::error::AblError;
use crate::grid::Grid;
use crate::ops;

/// One emitted row of `timeseries.csv`.
#[derive(Debug, Clone, Copy)]
pub struct TimeseriesRow {
    pub t: f64,
    pub u_tau: f64,
    pub qstar: f64,
    pub l_mo: f64,
    pub theta_b: f64,
    pub dt: f64,
    pub cfl: f64,
}

const TIMESERIES_HEADER: &str = "t,u_tau,qstar,l_mo,theta_b,dt,cfl";

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary sibling and renames, so a crash mid-write
/// never leaves a half-written file under the final name.
fn write_atomic(path: &Path, contents: &str) -> Result<(), AblError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Appends one row to the time series, writing the header first when the
/// file is new or empty.
pub fn append_timeseries(path: &Path, row: &TimeseriesRow) -> Result<(), AblError> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if file.metadata()?.len() == 0 {
        writeln!(file, "{TIMESERIES_HEADER}")?;
    }
    writeln!(
        file,
        "{},{},{},{},{},{},{}",
        fmt(row.t),
        fmt(row.u_tau),
        fmt(row.qstar),
        fmt(row.l_mo),
        fmt(row.theta_b),
        fmt(row.dt),
        fmt(row.cfl)
    )?;
    Ok(())
}

/// Drops time-series rows recorded after `t_max`. A resumed run calls this
/// so rows the killed run wrote past its last checkpoint do not linger in
/// front of the rows the resumed run is about to append.
pub fn truncate_timeseries(path: &Path, t_max: f64) -> Result<(), AblError> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            kept.push_str(line);
            kept.push('\n');
            continue;
        }
        let first = line.split(',').next().unwrap_or("");
        let t: f64 = first.parse().map_err(|_| {
            AblError::Numerics(format!(
                "unparseable time {first:?} in {}",
                path.display()
            ))
        })?;
        if t <= t_max {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_atomic(path, &kept)
}

/// Writes `profiles.csv`: one row per cell-center level, columns in
/// [`ProfileSet::columns`] order.
pub fn write_profiles(path: &Path, profiles: &ProfileSet) -> Result<(), AblError> {
    let cols = profiles.columns();
    let names: Vec<&str> = cols.iter().map(|(name, _)| *name).collect();
    let mut text = names.join(",");
    text.push('\n');
    for k in 0..profiles.z.len() {
        let row: Vec<String> = cols.iter().map(|(_, col)| fmt(col[k])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, &text)
}

/// Writes `bulk.json`. Non-finite values (the Obukhov length of a neutral
/// window) come out as `null`.
pub fn write_bulk(path: &Path, bulk: &BulkQuantities) -> Result<(), AblError> {
    let mut text =
        serde_json::to_string_pretty(bulk).expect("bulk quantities always serialize");
    text.push('\n');
    write_atomic(path, &text)
}

/// File name for the spectra emitted at a requested height.
pub fn spectra_file_name(height: f64) -> String {
    format!("spectra_z{height}.csv")
}

/// Index of the cell-center level nearest to height `z`.
pub fn nearest_center_level(grid: &Grid, z: f64) -> usize {
    let raw = ((z - grid.z_bottom) / grid.dz - 0.5).round();
    raw.clamp(0.0, (grid.nz - 1) as f64) as usize
}

/// Emits one `spectra_z<height>.csv` per requested z-plane from the given
/// snapshot, Parseval-checking every spectrum before it touches disk.
///
/// Columns are the integer ring index, the physical wavenumber (rad/m), and
/// the ring-summed energies of the center-interpolated velocity components
/// and of theta. The ring at index 0 carries the squared plane mean over two.
pub fn write_spectra(
    dir: &Path,
    grid: &Grid,
    state: &State,
    planes: &[(String, f64)],
) -> Result<Vec<PathBuf>, AblError> {
    if planes.is_empty() {
        return Ok(Vec::new());
    }
    if (grid.lx - grid.ly).abs() > 1e-12 * grid.lx.abs() {
        return Err(AblError::Numerics(
            "horizontal spectra require a square domain (lx = ly)".into(),
        ));
    }
    let (uc, vc, wc) = ops::velocity_at_centers(grid, &state.u, &state.v, &state.w);
    let dk = 2.0 * std::f64::consts::PI / grid.lx;
    let mut written = Vec::new();
    for (axis, coord) in planes {
        if axis != "z" {
            return Err(AblError::config(
                "output.slice_planes",
                format!("spectra are taken on z planes, got axis {axis:?}"),
            ));
        }
        let k = nearest_center_level(grid, *coord);
        let fields: [&[f64]; 4] = [
            uc.level(k),
            vc.level(k),
            wc.level(k),
            state.theta.level(k),
        ];
        let mut spectra = Vec::with_capacity(4);
        for plane in fields {
            let e = diagnostics::horizontal_spectrum(plane, grid.nx, grid.ny)?;
            diagnostics::parseval_check(plane, &e)?;
            spectra.push(e);
        }
        let mut text = String::from("k_index,k_h,e_u,e_v,e_w,e_theta\n");
        for b in 0..spectra[0].len() {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b,
                fmt(b as f64 * dk),
                fmt(spectra[0][b]),
                fmt(spectra[1][b]),
                fmt(spectra[2][b]),
                fmt(spectra[3][b]),
            ));
        }
        let path = dir.join(spectra_file_name(*coord));
        write_atomic(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
