//! CSV and JSON artifacts. Floats are written in Rust's shortest
//! round-trip form, so reading a file back gives the exact in-memory values.
//! Regime and state columns count from 1, mid-state `(m + 1) / 2`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use resopt_core::{limit_transition, ExerciseBoundary, TechnicalModel, ValueSurface};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::OutputConfig;
use crate::error::{CliError, Result};

pub const BOUNDARY_FILE: &str = "boundary.csv";
pub const SURFACE_FILE: &str = "surface.csv";
pub const LEARNING_FILE: &str = "learning_distribution.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const VALIDATION_FILE: &str = "validation_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub scenario: String,
    pub t_years: f64,
    pub regime_index: usize,
    pub volume_estimate: f64,
    /// Empty when waiting is optimal at every spot on the grid.
    pub boundary_spot_or_empty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub scenario: String,
    pub t_years: f64,
    pub regime_index: usize,
    pub x: f64,
    pub spot: f64,
    pub value_undeflated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRow {
    pub t_years: f64,
    pub state: usize,
    pub probability: f64,
}

/// Boundary rows for every exercise date except the last, where the
/// boundary is just the zero crossing of the payoff.
pub fn boundary_rows(scenario: &str, boundary: &ExerciseBoundary, tech: &TechnicalModel) -> Vec<BoundaryRow> {
    let dates = boundary.times().len().saturating_sub(1);
    let mut rows = Vec::with_capacity(dates * boundary.states());
    for (d, &t) in boundary.times().iter().enumerate().take(dates) {
        for (j, &v) in tech.volumes().iter().enumerate() {
            rows.push(BoundaryRow {
                scenario: scenario.to_string(),
                t_years: t,
                regime_index: j + 1,
                volume_estimate: v,
                boundary_spot_or_empty: boundary.get(d, j),
            });
        }
    }
    rows
}

/// Dates kept by the output stride: `0, k, 2k, ...` and always the last.
pub fn surface_dates(n_dates: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut dates: Vec<usize> = (0..n_dates).step_by(stride).collect();
    if dates.last() != Some(&(n_dates - 1)) {
        dates.push(n_dates - 1);
    }
    dates
}

/// Nodes at multiples of the stride from `x = 0`, inside `|x| <= x_max`.
pub fn surface_nodes(surface: &ValueSurface, stride: usize, x_max: f64) -> Vec<usize> {
    let origin = surface.origin_index();
    let stride = stride.max(1);
    surface
        .x_grid()
        .iter()
        .enumerate()
        .filter(|(i, x)| i.abs_diff(origin) % stride == 0 && x.abs() <= x_max)
        .map(|(i, _)| i)
        .collect()
}

pub fn surface_rows(scenario: &str, surface: &ValueSurface, output: &OutputConfig) -> Vec<SurfaceRow> {
    let dates = surface_dates(surface.times().len(), output.surface_date_stride);
    let nodes = surface_nodes(surface, output.surface_x_stride, output.surface_x_max);
    let mut rows = Vec::with_capacity(dates.len() * surface.states() * nodes.len());
    for &d in &dates {
        for j in 0..surface.states() {
            for &i in &nodes {
                rows.push(SurfaceRow {
                    scenario: scenario.to_string(),
                    t_years: surface.times()[d],
                    regime_index: j + 1,
                    x: surface.x_grid()[i],
                    spot: surface.spot(i),
                    value_undeflated: surface.undeflated(d, j, i),
                });
            }
        }
    }
    rows
}

/// Law of the eventual volume state given the mid-state at each time.
pub fn learning_rows(tech: &TechnicalModel, times: &[f64]) -> Result<Vec<LearningRow>, resopt_core::Error> {
    let mid = tech.mid_state();
    let mut rows = Vec::with_capacity(times.len() * tech.states());
    for &t in times {
        let limit = limit_transition(t, tech)?;
        for k in 0..tech.states() {
            rows.push(LearningRow {
                t_years: t,
                state: k + 1,
                probability: limit[(mid, k)],
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `<out>/<scenario>/`.
pub fn scenario_dir(out: &Path, scenario: &str) -> PathBuf {
    out.join(scenario)
}
