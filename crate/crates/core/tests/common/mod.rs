#![allow(dead_code)]

use nalgebra::DMatrix;
use resopt_core::*;

pub const VOLUME_SCALE: f64 = 1.8e5;

pub fn market() -> MarketModel {
    MarketModel::new(0.5, 100f64.ln(), 0.5, 0.05).unwrap()
}

pub fn plan(running_cost: f64) -> ExtractionPlan {
    ExtractionPlan::new(1.0, 0.05, 0.9, 2.0, running_cost)
        .unwrap()
        .with_volume_scale(VOLUME_SCALE)
        .unwrap()
}

pub fn costs() -> CostModel {
    CostModel::new(1e8, 3e6).unwrap()
}

/// Prior on the `[4, 16]` volume grid; `horizon_ratio` is the share of the
/// initial variance left at the learning horizon.
pub fn prior(m: usize, horizon_ratio: f64) -> PriorSpec {
    PriorSpec {
        mu: 10.0,
        sigma0_sq: 2.25,
        sigma_tp_sq: 2.25 * horizon_ratio,
        t_prime: 2.0,
        m,
        n_sigmas: 4.0,
    }
}

pub fn slow(m: usize) -> TechnicalModel {
    calibrate(&prior(m, 2.5 / 3.0), LearningMode::Calibrated).unwrap().0
}

pub fn fast(m: usize) -> TechnicalModel {
    calibrate(&prior(m, 1.0 / 3.0), LearningMode::Calibrated).unwrap().0
}

pub fn frozen(m: usize) -> TechnicalModel {
    calibrate(&prior(m, 2.5 / 3.0), LearningMode::NoLearning).unwrap().0
}

/// A chain with a single volume and no dynamics.
pub fn single_state(volume: f64) -> TechnicalModel {
    TechnicalModel::new(vec![volume], DMatrix::zeros(1, 1), 0.0, 0.0).unwrap()
}

pub fn grid(n_points: usize, intervals: usize, horizon: f64) -> GridSpec {
    GridSpec::for_market(&market(), n_points, GridSpec::uniform_dates(horizon, intervals)).unwrap()
}

pub fn problem(tech: TechnicalModel, running_cost: f64, grid: GridSpec) -> PricingProblem {
    PricingProblem::new(market(), plan(running_cost), costs(), tech, grid).unwrap()
}
