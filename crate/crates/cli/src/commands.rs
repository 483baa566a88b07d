use std::path::{Path, PathBuf};
use std::time::Instant;

use resopt_core::{
    extract_boundary, validate_problem, CalibrationReport, FstSolver, StepKernel, ValidationReport,
};
use serde::Serialize;

use crate::artifacts::{
    boundary_rows, learning_rows, scenario_dir, surface_rows, write_csv, write_json, BOUNDARY_FILE,
    CALIBRATION_FILE, LEARNING_FILE, SURFACE_FILE, VALIDATION_FILE,
};
use crate::config::{RunConfig, ScenarioConfig};
use crate::error::{CliError, Result};

pub const OUT_DIR_ENV: &str = "RESOPT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";

/// Headline numbers of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub directory: PathBuf,
    /// Undiscounted option value at `t = 0`, `x = 0`, mid-state.
    pub value_mid: f64,
    pub boundary_points: usize,
    pub grid_warnings: usize,
}

/// Output directory: explicit flag (or its environment default), then the
/// scenario's `output_dir`, then `./out`.
pub fn output_root(flag: Option<&Path>, scenario: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn run_scenario(scenario: &ScenarioConfig, out: &Path) -> Result<RunSummary> {
    let wrap = |source| CliError::Model {
        scenario: scenario.name.clone(),
        source,
    };
    let started = Instant::now();
    let prepared = scenario.prepare()?;
    let problem = &prepared.problem;
    let surface = FstSolver::new(problem).solve().map_err(wrap)?;
    let boundary = extract_boundary(&surface, problem).map_err(wrap)?;
    log::info!("{}: solved in {:.2?}", scenario.name, started.elapsed());
    for d in surface.diagnostics() {
        log::warn!(
            "{}: regime {} keeps {:.3e} of its value mass near the grid edge",
            scenario.name,
            d.regime + 1,
            d.edge_fraction
        );
    }

    let dir = scenario_dir(out, &scenario.name);
    let rows = boundary_rows(&scenario.name, &boundary, &problem.tech);
    let boundary_points = rows.iter().filter(|r| r.boundary_spot_or_empty.is_some()).count();
    write_csv(&dir.join(BOUNDARY_FILE), &rows)?;
    write_csv(&dir.join(SURFACE_FILE), &surface_rows(&scenario.name, &surface, &scenario.output))?;
    let learning = learning_rows(&problem.tech, &scenario.learning_times()).map_err(wrap)?;
    write_csv(&dir.join(LEARNING_FILE), &learning)?;
    if let Some(report) = &prepared.calibration {
        write_json(&dir.join(CALIBRATION_FILE), report)?;
    }

    Ok(RunSummary {
        scenario: scenario.name.clone(),
        value_mid: surface.undeflated(0, problem.tech.mid_state(), surface.origin_index()),
        boundary_points,
        grid_warnings: surface.diagnostics().len(),
        directory: dir,
    })
}

/// Runs the selected scenarios one after another.
pub fn run(config: &RunConfig, filter: &[String], out: Option<&Path>) -> Result<Vec<RunSummary>> {
    config
        .select(filter)?
        .into_iter()
        .map(|s| run_scenario(s, &output_root(out, s)))
        .collect()
}

/// Cross-checks every scenario at its reduced validation resolution and
/// writes `validation_report.json` under `out`.
pub fn validate(config: &RunConfig, out: &Path, kernel: Option<StepKernel>) -> Result<ValidationReport> {
    let mut results = Vec::with_capacity(config.scenarios.len());
    for scenario in &config.scenarios {
        let wrap = |source| CliError::Model {
            scenario: scenario.name.clone(),
            source,
        };
        let started = Instant::now();
        let prepared = scenario.prepare_for_validation()?;
        let mut settings = scenario.validation.settings().map_err(wrap)?;
        if let Some(k) = kernel {
            settings.kernel = k;
        }
        let result = validate_problem(&scenario.name, &prepared.problem, &settings).map_err(wrap)?;
        log::info!("{}: validated in {:.2?}", scenario.name, started.elapsed());
        results.push(result);
    }
    let report = ValidationReport::new(results);
    write_json(&out.join(VALIDATION_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCalibration {
    pub scenario: String,
    pub report: Option<CalibrationReport>,
}

pub fn calibrate(config: &RunConfig, filter: &[String]) -> Result<Vec<NamedCalibration>> {
    config
        .select(filter)?
        .into_iter()
        .map(|s| {
            let (_, report) = s.technical_model().map_err(|source| CliError::Model {
                scenario: s.name.clone(),
                source,
            })?;
            Ok(NamedCalibration {
                scenario: s.name.clone(),
                report,
            })
        })
        .collect()
}
