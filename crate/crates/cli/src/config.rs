//! Experiment files.
//!
//! A run file is TOML with one table per model component at the top level
//! and a `[[scenarios]]` array. Each scenario inherits every top-level table
//! and may override any key inside it:
//!
//! ```toml
//! [plan]
//! alpha = 1.0
//! running_cost = 0.0
//! # ...
//!
//! [[scenarios]]
//! name = "with_costs"
//! plan = { running_cost = 20.0 }
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use resopt_core::oracle::SimConfig;
use resopt_core::{
    calibrate, CalibrationReport, CostModel, ExtractionPlan, GridSpec, LearningMode, MarketModel,
    PricingProblem, PriorSpec, TechnicalModel, ValidationSettings,
};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// All scenarios of one run file, in file order.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: PathBuf,
    pub scenarios: Vec<ScenarioConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default = "calibrated")]
    pub learning: LearningMode,
    pub market: MarketModel,
    pub plan: ExtractionPlan,
    pub costs: CostModel,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    /// Explicit chain, used instead of calibrating from `prior`.
    #[serde(default)]
    pub technical: Option<TechnicalSpec>,
    pub grid: GridConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn calibrated() -> LearningMode {
    LearningMode::Calibrated
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnicalSpec {
    pub volumes: Vec<f64>,
    /// Row-major base generator.
    pub generator: Vec<Vec<f64>>,
    pub learn_a: f64,
    pub learn_b: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub horizon: f64,
    /// Exercise dates are `horizon * k / intervals`, `k = 0..=intervals`.
    pub intervals: usize,
    /// Defaults to `width_sds` stationary standard deviations.
    #[serde(default)]
    pub x_half_width: Option<f64>,
    #[serde(default = "default_width_sds")]
    pub width_sds: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
}

fn default_width_sds() -> f64 {
    6.0
}

fn default_quadrature() -> usize {
    GridSpec::DEFAULT_QUADRATURE_POINTS
}

impl GridConfig {
    pub fn to_spec(&self, market: &MarketModel) -> Result<GridSpec, resopt_core::Error> {
        self.with_resolution(market, self.n_points, self.intervals)
    }

    pub fn with_resolution(&self, market: &MarketModel, n_points: usize, intervals: usize) -> Result<GridSpec, resopt_core::Error> {
        if intervals == 0 {
            return Err(resopt_core::Error::EmptySchedule);
        }
        let spec = GridSpec {
            x_half_width: self
                .x_half_width
                .unwrap_or(self.width_sds * market.stationary_std()),
            n_points,
            exercise_dates: GridSpec::uniform_dates(self.horizon, intervals),
            quadrature_points: self.quadrature_points,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// What goes into the surface and learning-distribution files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Every `k`-th exercise date (the last date is always kept).
    pub surface_date_stride: usize,
    /// Every `k`-th spatial node, counted from `x = 0`.
    pub surface_x_stride: usize,
    /// Only nodes with `|x| <= surface_x_max`.
    pub surface_x_max: f64,
    /// Defaults to `[0, t_prime]`, or `[0]` without a prior.
    pub learning_times: Option<Vec<f64>>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            surface_date_stride: 5,
            surface_x_stride: 64,
            surface_x_max: 1.5,
            learning_times: None,
        }
    }
}

/// Reduced-resolution settings for `validate`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub n_points: usize,
    pub intervals: usize,
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub lattice_points: usize,
    pub max_z: f64,
    pub lattice_rel_tol: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let base = ValidationSettings::default();
        Self {
            n_points: 1024,
            intervals: 51,
            n_paths: 200_000,
            dt_sim: base.sim.dt_sim,
            seed: base.sim.seed,
            lattice_points: 401,
            max_z: base.max_z,
            lattice_rel_tol: base.lattice_rel_tol,
        }
    }
}

impl ValidationConfig {
    pub fn settings(&self) -> Result<ValidationSettings, resopt_core::Error> {
        Ok(ValidationSettings {
            sim: SimConfig::new(self.n_paths, self.dt_sim, self.seed)?,
            lattice_points: self.lattice_points,
            max_z: self.max_z,
            lattice_rel_tol: self.lattice_rel_tol,
            ..ValidationSettings::default()
        })
    }
}

/// A scenario with its chain built and calibrated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: PricingProblem,
    pub calibration: Option<CalibrationReport>,
}

impl ScenarioConfig {
    fn check(&self) -> Result<(), String> {
        match (&self.prior, &self.technical) {
            (None, None) => Err("needs either a [prior] or a [technical] table".into()),
            (Some(_), Some(_)) => Err("[prior] and [technical] are mutually exclusive".into()),
            _ => Ok(()),
        }
    }

    pub fn technical_model(&self) -> Result<(TechnicalModel, Option<CalibrationReport>), resopt_core::Error> {
        if let Some(prior) = &self.prior {
            let (tech, report) = calibrate(prior, self.learning)?;
            return Ok((tech, Some(report)));
        }
        let spec = self.technical.as_ref().expect("checked at load time");
        let m = spec.volumes.len();
        if spec.generator.len() != m || spec.generator.iter().any(|r| r.len() != m) {
            return Err(resopt_core::Error::DimensionMismatch {
                what: "generator",
                expected: m,
                found: spec.generator.len(),
            });
        }
        let generator = DMatrix::from_fn(m, m, |i, j| spec.generator[i][j]);
        let (a, b) = match self.learning {
            LearningMode::Calibrated => (spec.learn_a, spec.learn_b),
            LearningMode::NoLearning => (1.0, 0.0),
        };
        Ok((TechnicalModel::new(spec.volumes.clone(), generator, a, b)?, None))
    }

    pub fn prepare(&self) -> Result<Prepared> {
        self.prepare_with(|g, mk| g.to_spec(mk))
    }

    /// Same model on the reduced validation grid.
    pub fn prepare_for_validation(&self) -> Result<Prepared> {
        let v = &self.validation;
        self.prepare_with(|g, mk| g.with_resolution(mk, v.n_points, v.intervals))
    }

    fn prepare_with(&self, grid: impl Fn(&GridConfig, &MarketModel) -> Result<GridSpec, resopt_core::Error>) -> Result<Prepared> {
        let wrap = |source| CliError::Model {
            scenario: self.name.clone(),
            source,
        };
        let (tech, calibration) = self.technical_model().map_err(wrap)?;
        let grid = grid(&self.grid, &self.market).map_err(wrap)?;
        let problem = PricingProblem::new(self.market, self.plan, self.costs, tech, grid).map_err(wrap)?;
        Ok(Prepared {
            problem,
            calibration,
        })
    }

    pub fn learning_times(&self) -> Vec<f64> {
        match (&self.output.learning_times, &self.prior) {
            (Some(times), _) => times.clone(),
            (None, Some(prior)) => vec![0.0, prior.t_prime],
            (None, None) => vec![0.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let parse_err = |message: String| CliError::Config {
            path: source.to_path_buf(),
            message,
        };
        let mut base: Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let entries = match base.remove("scenarios") {
            Some(Value::Array(items)) => items,
            Some(_) => return Err(parse_err("`scenarios` must be an array of tables".into())),
            None => return Err(parse_err("no [[scenarios]] defined".into())),
        };
        if entries.is_empty() {
            return Err(parse_err("no [[scenarios]] defined".into()));
        }

        let mut scenarios = Vec::with_capacity(entries.len());
        let mut seen = BTreeSet::new();
        for (index, entry) in entries.into_iter().enumerate() {
            let Value::Table(overrides) = entry else {
                return Err(parse_err(format!("scenario #{} is not a table", index + 1)));
            };
            let label = match overrides.get("name") {
                Some(Value::String(s)) => format!("scenario `{s}`"),
                _ => format!("scenario #{}", index + 1),
            };
            let merged = merge_scenario(&base, overrides);
            let scenario: ScenarioConfig = Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| parse_err(format!("{label}: {}", e.message())))?;
            scenario.check().map_err(|m| parse_err(format!("{label}: {m}")))?;
            if !seen.insert(scenario.name.clone()) {
                return Err(parse_err(format!("duplicate scenario name `{}`", scenario.name)));
            }
            scenarios.push(scenario);
        }
        Ok(Self {
            source: source.to_path_buf(),
            scenarios,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.scenarios.iter().map(|s| s.name.clone()).collect()
    }

    /// Scenarios named in `filter`, in the order given; all of them when the
    /// filter is empty.
    pub fn select(&self, filter: &[String]) -> Result<Vec<&ScenarioConfig>> {
        if filter.is_empty() {
            return Ok(self.scenarios.iter().collect());
        }
        filter
            .iter()
            .map(|name| {
                self.scenarios
                    .iter()
                    .find(|s| &s.name == name)
                    .ok_or_else(|| CliError::UnknownScenario {
                        name: name.clone(),
                        available: self.names(),
                    })
            })
            .collect()
    }
}

/// Top-level tables overlaid with one scenario's overrides. A scenario that
/// brings its own chain drops the inherited one of the other kind.
fn merge_scenario(base: &Table, overrides: Table) -> Table {
    let mut merged = base.clone();
    if overrides.contains_key("technical") && !overrides.contains_key("prior") {
        merged.remove("prior");
    }
    if overrides.contains_key("prior") && !overrides.contains_key("technical") {
        merged.remove("technical");
    }
    deep_merge(&mut merged, overrides);
    merged
}

fn deep_merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => deep_merge(dst, src),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}
