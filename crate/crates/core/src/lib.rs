//! Valuation of the irreversible option to invest in a commodity reserve
//! whose volume is only learned over time.
//!
//! * [`model`]: market, extraction, cost and reserve-chain types, forward
//!   prices and depletion times.
//! * [`calib`]: state grid, birth–death generator and learning-function
//!   calibration.
//! * [`reserve`]: limit transition matrices and expected discounted reserve
//!   values.
//! * [`fst`]: Fourier space-time stepping for the Bermudan option and its
//!   exercise boundary.
//! * [`oracle`]: Monte Carlo and finite-difference cross-checks.
//! * [`validation`]: the cross-check suite bundled into a report.

pub mod calib;
pub mod error;
pub mod fst;
mod interp;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod reserve;
pub mod validation;

pub use calib::{
    build_generator, build_state_grid, calibrate, calibrate_lambda, calibrate_learning,
    conditional_moments, discretized_prior, CalibrationReport, LambdaVector, LearningFit,
    LearningMode, PriorSpec,
};
pub use error::{Error, Result};
pub use fst::{
    apply_exercise, extract_boundary, propagate_interval, psi, regime_coupler, solve, step_factor,
    ExerciseBoundary, FstSolver, GridDiagnostic, Propagator, Schedule, StepKernel, ValueSurface,
};
pub use model::{
    depletion_time, forward_price, investment_cost, CostModel, ExtractionPlan, GridSpec,
    MarketModel, PricingProblem, TechnicalModel,
};
pub use reserve::{limit_transition, reserve_value, PayoffTable, ReserveValuator};
pub use validation::{
    validate_problem, Check, Metric, ScenarioValidation, ValidationReport, ValidationSettings,
};
