//! Calibration of the reserve-volume chain.
//!
//! The state grid is a symmetric lattice around the prior mean. The base
//! generator is a birth–death matrix whose invariant law is the prior
//! discretised on that lattice, and the learning function `a exp(-b t)` is
//! fitted so that the conditional variance from the mid-state matches the
//! prior variance now and the target variance at the learning horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{expm, Spectrum};
use crate::model::TechnicalModel;
use crate::reserve::limit_transition;

/// Half-width of the state grid in prior standard deviations.
///
/// A grid of `+-3` standard deviations holds less variance than the prior
/// itself, so the initial variance target would be unreachable; four is the
/// smallest integer width that leaves room.
pub const DEFAULT_N_SIGMAS: f64 = 4.0;

const BISECTION_TOL: f64 = 1e-12;
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

/// Normal prior on the reserve volume and the variance it should shrink to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub mu: f64,
    pub sigma0_sq: f64,
    pub sigma_tp_sq: f64,
    pub t_prime: f64,
    pub m: usize,
    #[serde(default = "default_n_sigmas")]
    pub n_sigmas: f64,
}

fn default_n_sigmas() -> f64 {
    DEFAULT_N_SIGMAS
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(invalid("sigma0_sq", "must be positive"));
        }
        if !(self.sigma_tp_sq > 0.0 && self.sigma_tp_sq <= self.sigma0_sq) {
            return Err(invalid("sigma_tp_sq", "must lie in (0, sigma0_sq]"));
        }
        if !(self.t_prime > 0.0 && self.t_prime.is_finite()) {
            return Err(invalid("t_prime", "must be positive"));
        }
        if self.m < 3 || self.m % 2 == 0 {
            return Err(invalid("m", "must be odd and at least 3"));
        }
        if !(self.n_sigmas > 0.0 && self.n_sigmas.is_finite()) {
            return Err(invalid("n_sigmas", "must be positive"));
        }
        if !(self.mu - self.n_sigmas * self.sigma0() > 0.0) {
            return Err(invalid("mu", "lowest grid volume must be positive"));
        }
        Ok(())
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0_sq.sqrt()
    }

    pub fn half_states(&self) -> usize {
        (self.m - 1) / 2
    }
}

/// Rates `lambda_1..lambda_{L+1}` from the edge states inwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaVector(Vec<f64>);

impl LambdaVector {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(invalid("lambdas", "must not be empty"));
        }
        if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("lambdas", "all rates must be positive"));
        }
        Ok(Self(lambdas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    Calibrated,
    NoLearning,
}

pub fn build_state_grid(prior: &PriorSpec) -> Result<Vec<f64>> {
    prior.validate()?;
    let half = prior.half_states();
    let step = prior.n_sigmas * prior.sigma0() / half as f64;
    let mut volumes = vec![prior.mu; prior.m];
    for i in 1..=half {
        volumes[half + i] = prior.mu + i as f64 * step;
        volumes[half - i] = prior.mu - i as f64 * step;
    }
    Ok(volumes)
}

/// Prior mass of each state: normal probability of the cell between
/// neighbouring midpoints, with the outer cells mirrored outwards, then
/// renormalised.
pub fn discretized_prior(prior: &PriorSpec, volumes: &[f64]) -> Result<Vec<f64>> {
    let m = volumes.len();
    if m < 3 || m % 2 == 0 {
        return Err(invalid("volumes", "need an odd number of states, at least 3"));
    }
    let scale = prior.sigma0() * std::f64::consts::SQRT_2;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid("sigma0_sq", "must be positive and finite"));
    }
    let cdf = |v: f64| 0.5 * libm::erfc((prior.mu - v) / scale);
    let sf = |v: f64| 0.5 * libm::erfc((v - prior.mu) / scale);
    // Upper-tail cells go through the survival function so both tails keep
    // full relative precision.
    let mass = |lo: f64, hi: f64| -> f64 {
        if lo >= prior.mu {
            sf(lo) - sf(hi)
        } else {
            cdf(hi) - cdf(lo)
        }
    };
    let half = m / 2;
    let mut pi = vec![0.0; m];
    pi[0] = mass(
        0.5 * (volumes[0] + (volumes[0] - (volumes[1] - volumes[0]))),
        0.5 * (volumes[0] + volumes[1]),
    );
    for k in 1..=half {
        let lo = 0.5 * (volumes[k] + volumes[k - 1]);
        let hi = 0.5 * (volumes[k + 1] + volumes[k]);
        pi[k] = mass(lo, hi);
    }
    for k in 0..half {
        pi[m - 1 - k] = pi[k];
    }
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Calibration("discretised prior has no mass".into()));
    }
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Symmetric tridiagonal generator: row `i` and its mirror `m-1-i` move to
/// each neighbour at rate `lambda[min(i, m-1-i)]`.
pub fn build_generator(lambdas: &LambdaVector, m: usize) -> Result<DMatrix<f64>> {
    if m % 2 == 0 {
        return Err(invalid("m", "must be odd"));
    }
    let half = m / 2;
    let lam = lambdas.as_slice();
    if lam.len() != half + 1 {
        return Err(Error::DimensionMismatch {
            what: "lambdas",
            expected: half + 1,
            found: lam.len(),
        });
    }
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        let rate = lam[i.min(m - 1 - i)];
        if i > 0 {
            a[(i, i - 1)] = rate;
        }
        if i + 1 < m {
            a[(i, i + 1)] = rate;
        }
        a[(i, i)] = -(a.row(i).sum());
    }
    Ok(a)
}

/// Rates whose chain has `pi_target` as invariant law, scaled so the
/// mid-state rate is one.
///
/// For a birth–death chain where each state leaves towards each neighbour
/// at the same rate `r_i`, detailed balance reads `pi_i r_i = const`, so
/// `r_i = pi_mid / pi_i` solves the problem exactly. The result is checked
/// against the eigenproblem `pi exp(A) = pi`.
pub fn calibrate_lambda(pi_target: &[f64]) -> Result<LambdaVector> {
    let m = pi_target.len();
    if m < 3 || m % 2 == 0 {
        return Err(invalid("pi_target", "need an odd number of states, at least 3"));
    }
    if pi_target.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("pi_target", "all masses must be positive"));
    }
    for k in 0..m / 2 {
        let (lo, hi) = (pi_target[k], pi_target[m - 1 - k]);
        if (lo - hi).abs() > 1e-12 * lo.max(hi) {
            return Err(invalid("pi_target", "must be symmetric about the mid-state"));
        }
    }
    let half = m / 2;
    let lambdas = LambdaVector::new((0..=half).map(|k| pi_target[half] / pi_target[k]).collect())?;

    let a = build_generator(&lambdas, m)?;
    let pi = DVector::from_column_slice(pi_target);
    let residual = (pi.transpose() * expm(&a) - pi.transpose()).amax();
    if residual > EIGEN_RESIDUAL_TOL {
        return Err(Error::NonConvergence {
            residual,
            tolerance: EIGEN_RESIDUAL_TOL,
        });
    }
    Ok(lambdas)
}

fn row_moments(row: impl Iterator<Item = f64> + Clone, volumes: &[f64]) -> (f64, f64) {
    let mean: f64 = row.clone().zip(volumes).map(|(p, v)| p * v).sum();
    let var = row.zip(volumes).map(|(p, v)| p * (v - mean).powi(2)).sum();
    (mean, var)
}

/// Mean and variance of the eventual volume given the chain is in
/// `from_state` at time `t`.
pub fn conditional_moments(t: f64, tech: &TechnicalModel, from_state: usize) -> Result<(f64, f64)> {
    if from_state >= tech.states() {
        return Err(Error::IndexOutOfRange {
            index: from_state,
            len: tech.states(),
        });
    }
    let p = limit_transition(t, tech)?;
    Ok(row_moments(p.row(from_state).iter().cloned(), tech.volumes()))
}

/// Fitted learning function `h_t = a exp(-b t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningFit {
    pub a: f64,
    pub b: f64,
    /// Remaining clock `a/b` at `t = 0`.
    pub clock_initial: f64,
    /// Remaining clock at the learning horizon.
    pub clock_horizon: f64,
}

/// Solves for `(a, b)` by matching the mid-state conditional variance at
/// `t = 0` and `t = T'`.
///
/// Both conditions see `(a, b)` only through the remaining clocks
/// `H_0 = a/b` and `H_T' = H_0 exp(-b T')`. Each is the root of the
/// increasing map `c -> Var[exp(cA) row]`, found by bisection.
pub fn calibrate_learning(prior: &PriorSpec, generator: &DMatrix<f64>, volumes: &[f64]) -> Result<LearningFit> {
    prior.validate()?;
    if volumes.len() != generator.nrows() {
        return Err(Error::DimensionMismatch {
            what: "volumes",
            expected: generator.nrows(),
            found: volumes.len(),
        });
    }
    if !(prior.sigma_tp_sq < prior.sigma0_sq) {
        return Err(Error::Calibration(
            "horizon variance must be strictly below the initial variance (b would be zero)".into(),
        ));
    }
    let spectrum = Spectrum::new(generator)?;
    let mid = volumes.len() / 2;
    let variance_at = |c: f64| -> f64 {
        let p = spectrum.exp(c);
        row_moments(p.row(mid).iter().cloned(), volumes).1
    };
    let ceiling = row_moments(spectrum.invariant().iter().cloned(), volumes).1;

    let solve = |target: f64, label: &str| -> Result<f64> {
        if !(target < ceiling) {
            return Err(Error::Calibration(format!(
                "{label} variance {target:e} is not attainable: the grid's invariant variance is {ceiling:e}"
            )));
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while variance_at(hi) < target {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Calibration(format!("{label} variance bracket diverged")));
            }
        }
        for _ in 0..400 {
            if hi - lo <= BISECTION_TOL {
                break;
            }
            let mid_c = 0.5 * (lo + hi);
            if variance_at(mid_c) < target {
                lo = mid_c;
            } else {
                hi = mid_c;
            }
        }
        Ok(0.5 * (lo + hi))
    };

    let clock_initial = solve(prior.sigma0_sq, "initial")?;
    let clock_horizon = solve(prior.sigma_tp_sq, "horizon")?;
    let b = (clock_initial / clock_horizon).ln() / prior.t_prime;
    if !(b > 0.0) {
        return Err(Error::Calibration("learning rate b is not positive".into()));
    }
    Ok(LearningFit {
        a: b * clock_initial,
        b,
        clock_initial,
        clock_horizon,
    })
}

/// Audit trail of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub volumes: Vec<f64>,
    pub pi_target: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub generator: Vec<Vec<f64>>,
    pub learning: LearningMode,
    pub a: f64,
    pub b: f64,
    pub clock_initial: Option<f64>,
    pub clock_horizon: Option<f64>,
    /// `max |pi_model - pi_target|`.
    pub invariant_residual: f64,
    /// `max |pi_target exp(A) - pi_target|`.
    pub eigen_residual: f64,
    pub variance_t0: f64,
    pub variance_t_prime: f64,
    pub target_variance_t0: f64,
    pub target_variance_t_prime: f64,
}

/// Full pipeline: grid, prior law, generator and learning function.
pub fn calibrate(prior: &PriorSpec, mode: LearningMode) -> Result<(TechnicalModel, CalibrationReport)> {
    let volumes = build_state_grid(prior)?;
    let pi_target = discretized_prior(prior, &volumes)?;
    let lambdas = calibrate_lambda(&pi_target)?;
    let generator = build_generator(&lambdas, prior.m)?;

    let (a, b, clocks) = match mode {
        LearningMode::Calibrated => {
            let fit = calibrate_learning(prior, &generator, &volumes)?;
            (fit.a, fit.b, Some((fit.clock_initial, fit.clock_horizon)))
        }
        LearningMode::NoLearning => (1.0, 0.0, None),
    };
    let tech = TechnicalModel::new(volumes.clone(), generator.clone(), a, b)?;

    let invariant_residual = tech
        .spectrum()
        .invariant()
        .iter()
        .zip(&pi_target)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let pi = DVector::from_column_slice(&pi_target);
    let eigen_residual = (pi.transpose() * expm(&generator) - pi.transpose()).amax();
    let mid = tech.mid_state();
    let report = CalibrationReport {
        volumes,
        pi_target,
        lambdas: lambdas.as_slice().to_vec(),
        generator: generator.row_iter().map(|r| r.iter().cloned().collect()).collect(),
        learning: mode,
        a,
        b,
        clock_initial: clocks.map(|c| c.0),
        clock_horizon: clocks.map(|c| c.1),
        invariant_residual,
        eigen_residual,
        variance_t0: conditional_moments(0.0, &tech, mid)?.1,
        variance_t_prime: conditional_moments(prior.t_prime, &tech, mid)?.1,
        target_variance_t0: prior.sigma0_sq,
        target_variance_t_prime: prior.sigma_tp_sq,
    };
    Ok((tech, report))
}
