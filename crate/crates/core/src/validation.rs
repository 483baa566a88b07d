//! Three-way cross-check of a pricing problem: reserve value against Monte
//! Carlo, European Fourier price against Monte Carlo, and Bermudan Fourier
//! price against the finite-difference lattice.

use serde::Serialize;

use crate::error::Result;
use crate::fst::{step_factor, FstSolver, Schedule, StepKernel};
use crate::model::PricingProblem;
use crate::oracle::{european_mc, lattice_bermudan, simulate_dcf, LatticeSpec, SimConfig};
use crate::reserve::reserve_value;

#[derive(Debug, Clone, Copy)]
pub struct ValidationSettings {
    pub sim: SimConfig,
    /// Lattice nodes across the pricing grid's `x` range (odd).
    pub lattice_points: usize,
    /// Largest accepted `|estimate - reference| / std_error`.
    pub max_z: f64,
    /// Largest accepted relative gap between Fourier and lattice prices.
    pub lattice_rel_tol: f64,
    /// Spectral multiplier handed to the Fourier solver.
    pub kernel: StepKernel,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            sim: SimConfig {
                n_paths: 1_000_000,
                dt_sim: 1.0 / 52.0,
                seed: 20_240_601,
            },
            lattice_points: 801,
            max_z: 3.0,
            lattice_rel_tol: 0.01,
            kernel: step_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Distance in Monte Carlo standard errors.
    ZScore,
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub regime: Option<usize>,
    pub estimate: f64,
    pub reference: f64,
    pub std_error: Option<f64>,
    pub metric: Metric,
    pub score: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, regime: Option<usize>, estimate: f64, reference: f64, std_error: Option<f64>, metric: Metric, tolerance: f64) -> Self {
        let gap = (estimate - reference).abs();
        let score = match metric {
            Metric::ZScore => match std_error {
                Some(se) if se > 0.0 => gap / se,
                // no sampling noise: demand agreement to round-off
                _ => gap / (1e-8 * reference.abs().max(1e-300)),
            },
            Metric::Relative => gap / reference.abs(),
        };
        Self {
            name: name.to_string(),
            regime,
            estimate,
            reference,
            std_error,
            metric,
            score,
            tolerance,
            passed: score <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioValidation {
    pub scenario: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scenarios: Vec<ScenarioValidation>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(scenarios: Vec<ScenarioValidation>) -> Self {
        let passed = scenarios.iter().all(|s| s.passed);
        Self { scenarios, passed }
    }
}

/// Runs every cross-check at `(t = 0, x = 0)`.
pub fn validate_problem(name: &str, problem: &PricingProblem, settings: &ValidationSettings) -> Result<ScenarioValidation> {
    let tech = &problem.tech;
    let mid = tech.mid_state();
    let dates = problem.grid.exercise_dates.len();
    let origin = problem.grid.origin_index();
    let mut checks = Vec::new();

    let dcf = simulate_dcf(0.0, 0.0, mid, &problem.market, &problem.plan, tech, &settings.sim)?;
    let reserve = reserve_value(0.0, 0.0, mid, &problem.market, &problem.plan, tech, &problem.grid)?;
    checks.push(Check::new(
        "reserve_value_vs_mc",
        Some(mid),
        reserve,
        dcf.mean,
        Some(dcf.std_error),
        Metric::ZScore,
        settings.max_z,
    ));

    let european = FstSolver::new(problem)
        .with_schedule(Schedule::european(dates))
        .with_kernel(settings.kernel)
        .solve()?;
    let mc = european_mc(problem, 0.0, &settings.sim)?;
    for (j, est) in mc.iter().enumerate() {
        checks.push(Check::new(
            "european_fst_vs_mc",
            Some(j),
            european.value(0, j, origin),
            est.mean,
            Some(est.std_error),
            Metric::ZScore,
            settings.max_z,
        ));
    }

    let bermudan = FstSolver::new(problem).with_kernel(settings.kernel).solve()?;
    let spec = LatticeSpec::stable(settings.lattice_points, problem.grid.x_half_width, &problem.market)?;
    let lattice = lattice_bermudan(problem, &spec, &Schedule::every_date(dates))?;
    checks.push(Check::new(
        "bermudan_fst_vs_lattice",
        Some(mid),
        bermudan.value(0, mid, origin),
        lattice[mid],
        None,
        Metric::Relative,
        settings.lattice_rel_tol,
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(ScenarioValidation {
        scenario: name.to_string(),
        checks,
        passed,
    })
}
