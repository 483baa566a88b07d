//! Domain types and the closed-form pieces of the valuation: forward
//! prices, extraction arithmetic and investment cost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Spectrum;

/// Exponential Ornstein–Uhlenbeck spot model `S = exp(theta + X)`,
/// `dX = -kappa X dt + sigma dW`, discounted at `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl MarketModel {
    pub fn new(kappa: f64, theta: f64, sigma: f64, rho: f64) -> Result<Self> {
        let m = Self {
            kappa,
            theta,
            sigma,
            rho,
        };
        m.validate()?;
        Ok(m)
    }

    /// `sigma = 0` is accepted as the deterministic limit.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        if !self.theta.is_finite() {
            return Err(invalid("theta", "must be finite"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", "must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the stationary law of `X`.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.kappa).sqrt()
    }

    /// Variance of `X_{t+h}` given `X_t`.
    pub fn transition_variance(&self, h: f64) -> f64 {
        self.sigma * self.sigma * (-(-2.0 * self.kappa * h).exp_m1()) / (2.0 * self.kappa)
    }

    pub fn spot(&self, x: f64) -> f64 {
        (self.theta + x).exp()
    }
}

/// Extraction schedule `g(u) = alpha exp(-beta (u - t - epsilon))` once
/// production starts, recovering a fraction `gamma` of the reserve.
///
/// `volume_scale` is the number of commodity units represented by one unit
/// of the volume grid; it multiplies every extraction cash flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPlan {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(alias = "c")]
    pub running_cost: f64,
    #[serde(default = "unit_scale")]
    pub volume_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl ExtractionPlan {
    pub fn new(alpha: f64, beta: f64, gamma: f64, epsilon: f64, running_cost: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            epsilon,
            running_cost,
            volume_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_volume_scale(mut self, scale: f64) -> Result<Self> {
        self.volume_scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", "must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be non-negative"));
        }
        if !(self.running_cost >= 0.0 && self.running_cost.is_finite()) {
            return Err(invalid("running_cost", "must be non-negative"));
        }
        if !(self.volume_scale > 0.0 && self.volume_scale.is_finite()) {
            return Err(invalid("volume_scale", "must be positive"));
        }
        Ok(())
    }

    /// Extraction rate `s` years after production starts.
    pub fn rate(&self, s: f64) -> f64 {
        self.alpha * (-self.beta * s).exp()
    }

    /// Checks that every volume on the grid is depleted in finite time.
    pub fn check_feasible(&self, volumes: &[f64]) -> Result<()> {
        for &v in volumes {
            depletion_time(v, self)?;
        }
        Ok(())
    }
}

/// Fixed plus volume-proportional investment cost `c0 + c1 v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c0: f64,
    pub c1: f64,
}

impl CostModel {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        let c = Self { c0, c1 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(invalid("c0", "must be non-negative"));
        }
        if !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return Err(invalid("c1", "must be non-negative"));
        }
        Ok(())
    }
}

/// Reserve-volume chain: state volumes, base generator `A` and the learning
/// function `h_t = a exp(-b t)` scaling it.
#[derive(Debug, Clone)]
pub struct TechnicalModel {
    volumes: Vec<f64>,
    spectrum: Spectrum,
    learn_a: f64,
    learn_b: f64,
}

impl TechnicalModel {
    pub fn new(volumes: Vec<f64>, generator: DMatrix<f64>, learn_a: f64, learn_b: f64) -> Result<Self> {
        let m = volumes.len();
        if m % 2 == 0 {
            return Err(invalid("volumes", "state count must be odd"));
        }
        if generator.nrows() != m || generator.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: "generator",
                expected: m,
                found: generator.nrows(),
            });
        }
        if volumes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("volumes", "must be finite and non-negative"));
        }
        if volumes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("volumes", "must be strictly increasing"));
        }
        let mid = volumes[m / 2];
        let span = volumes[m - 1] - volumes[0];
        for i in 0..m / 2 {
            let asym = (volumes[m - 1 - i] - mid) - (mid - volumes[i]);
            if asym.abs() > 1e-12 * span.max(mid.abs()) {
                return Err(invalid("volumes", "must be symmetric about the mid-state"));
            }
        }

        let scale = generator.amax().max(f64::MIN_POSITIVE);
        for i in 0..m {
            let row = generator.row(i);
            if row.sum().abs() > 1e-12 * scale {
                return Err(invalid("generator", format!("row {i} does not sum to zero")));
            }
            for j in 0..m {
                let v = generator[(i, j)];
                if i != j && v < 0.0 {
                    return Err(invalid("generator", "off-diagonal rates must be non-negative"));
                }
                if i.abs_diff(j) > 1 && v != 0.0 {
                    return Err(invalid("generator", "only neighbouring states may communicate"));
                }
                let mirrored = generator[(m - 1 - i, m - 1 - j)];
                if (v - mirrored).abs() > 1e-12 * scale {
                    return Err(invalid("generator", "rates must be symmetric about the mid-state"));
                }
            }
        }

        if !(learn_a >= 0.0 && learn_a.is_finite()) {
            return Err(invalid("learn_a", "must be non-negative"));
        }
        if !(learn_b >= 0.0 && learn_b.is_finite()) {
            return Err(invalid("learn_b", "must be non-negative"));
        }
        let spectrum = Spectrum::new(&generator)?;
        Ok(Self {
            volumes,
            spectrum,
            learn_a,
            learn_b,
        })
    }

    /// Same chain with different learning parameters.
    pub fn with_learning(&self, learn_a: f64, learn_b: f64) -> Result<Self> {
        if !(learn_a >= 0.0 && learn_a.is_finite()) {
            return Err(invalid("learn_a", "must be non-negative"));
        }
        if !(learn_b >= 0.0 && learn_b.is_finite()) {
            return Err(invalid("learn_b", "must be non-negative"));
        }
        Ok(Self {
            learn_a,
            learn_b,
            ..self.clone()
        })
    }

    pub fn states(&self) -> usize {
        self.volumes.len()
    }

    pub fn mid_state(&self) -> usize {
        self.volumes.len() / 2
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        self.spectrum.generator()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn learn_a(&self) -> f64 {
        self.learn_a
    }

    pub fn learn_b(&self) -> f64 {
        self.learn_b
    }

    /// `h_t`.
    pub fn learning_rate(&self, t: f64) -> f64 {
        self.learn_a * (-self.learn_b * t).exp()
    }

    /// `H_t = int_t^inf h_u du`; infinite without learning decay.
    pub fn remaining_clock(&self, t: f64) -> f64 {
        if self.learn_b > 0.0 {
            self.learn_a / self.learn_b * (-self.learn_b * t).exp()
        } else if self.learn_a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `int_s^t h_u du`.
    pub fn clock_increment(&self, s: f64, t: f64) -> f64 {
        if self.learn_b > 0.0 {
            self.learn_a / self.learn_b * ((-self.learn_b * s).exp() - (-self.learn_b * t).exp())
        } else {
            self.learn_a * (t - s)
        }
    }
}

/// Discretisation of the log-price deviation and the exercise calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_half_width: f64,
    pub n_points: usize,
    pub exercise_dates: Vec<f64>,
    pub quadrature_points: usize,
}

impl GridSpec {
    pub const DEFAULT_QUADRATURE_POINTS: usize = 64;

    /// `n_intervals + 1` equally spaced dates on `[0, horizon]`.
    pub fn uniform_dates(horizon: f64, n_intervals: usize) -> Vec<f64> {
        (0..=n_intervals)
            .map(|i| horizon * i as f64 / n_intervals as f64)
            .collect()
    }

    /// Grid six stationary standard deviations wide.
    pub fn for_market(market: &MarketModel, n_points: usize, exercise_dates: Vec<f64>) -> Result<Self> {
        let g = Self {
            x_half_width: 6.0 * market.stationary_std(),
            n_points,
            exercise_dates,
            quadrature_points: Self::DEFAULT_QUADRATURE_POINTS,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_half_width > 0.0 && self.x_half_width.is_finite()) {
            return Err(invalid("x_half_width", "must be positive"));
        }
        if self.n_points < 4 || !self.n_points.is_power_of_two() {
            return Err(invalid("n_points", "must be a power of two >= 4"));
        }
        if self.exercise_dates.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if self.exercise_dates[0] != 0.0 {
            return Err(invalid("exercise_dates", "must start at t = 0"));
        }
        if self.exercise_dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("exercise_dates", "must be strictly increasing"));
        }
        if self.quadrature_points == 0 {
            return Err(invalid("quadrature_points", "must be positive"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_half_width / self.n_points as f64
    }

    /// Nodes `(j - N/2) dx`, `j = 0..N`; node `N/2` is `x = 0`.
    pub fn x_grid(&self) -> Vec<f64> {
        let dx = self.dx();
        let half = (self.n_points / 2) as f64;
        (0..self.n_points).map(|j| (j as f64 - half) * dx).collect()
    }

    pub fn origin_index(&self) -> usize {
        self.n_points / 2
    }

    pub fn horizon(&self) -> f64 {
        *self.exercise_dates.last().expect("validated non-empty")
    }
}

/// Everything needed to price the investment option.
#[derive(Debug, Clone)]
pub struct PricingProblem {
    pub market: MarketModel,
    pub plan: ExtractionPlan,
    pub costs: CostModel,
    pub tech: TechnicalModel,
    pub grid: GridSpec,
}

impl PricingProblem {
    pub fn new(
        market: MarketModel,
        plan: ExtractionPlan,
        costs: CostModel,
        tech: TechnicalModel,
        grid: GridSpec,
    ) -> Result<Self> {
        let p = Self {
            market,
            plan,
            costs,
            tech,
            grid,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.plan.validate()?;
        self.costs.validate()?;
        self.grid.validate()?;
        if self.plan.alpha > 0.0 {
            self.plan.check_feasible(self.tech.volumes())?;
        }
        Ok(())
    }

    /// Investment cost of every regime.
    pub fn investment_costs(&self) -> Vec<f64> {
        self.tech
            .volumes()
            .iter()
            .map(|v| self.costs.c0 + self.costs.c1 * v)
            .collect()
    }
}

/// `F_t(u) = E[S_u | X_t = x]`.
pub fn forward_price(t: f64, x: f64, u: f64, market: &MarketModel) -> Result<f64> {
    if !(u >= t) {
        return Err(invalid("u", format!("forward date {u} precedes valuation date {t}")));
    }
    let h = u - t;
    let decay = (-market.kappa * h).exp();
    let var_term = market.sigma * market.sigma / (4.0 * market.kappa)
        * -(-2.0 * market.kappa * h).exp_m1();
    Ok((market.theta + decay * x + var_term).exp())
}

/// Time to extract `gamma v` at the decaying rate `g`.
pub fn depletion_time(v: f64, plan: &ExtractionPlan) -> Result<f64> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(invalid("volume", "must be non-negative"));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    if plan.alpha == 0.0 {
        return Err(Error::InfeasibleVolume {
            volume: v,
            ratio: f64::INFINITY,
        });
    }
    let ratio = plan.beta * plan.gamma * v / plan.alpha;
    if ratio >= 1.0 {
        return Err(Error::InfeasibleVolume { volume: v, ratio });
    }
    if plan.beta == 0.0 {
        Ok(plan.gamma * v / plan.alpha)
    } else {
        Ok(-(-ratio).ln_1p() / plan.beta)
    }
}

/// `I^(k) = c0 + c1 v^(k)`; `regime` is zero-based.
pub fn investment_cost(regime: usize, costs: &CostModel, tech: &TechnicalModel) -> Result<f64> {
    let v = tech.volumes().get(regime).ok_or(Error::IndexOutOfRange {
        index: regime,
        len: tech.states(),
    })?;
    Ok(costs.c0 + costs.c1 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> MarketModel {
        MarketModel::new(0.5, 100f64.ln(), 0.5, 0.05).unwrap()
    }

    #[test]
    fn zero_horizon_forward_is_spot() {
        let m = market();
        let f = forward_price(1.3, 0.4, 1.3, &m).unwrap();
        assert!((f - (m.theta + 0.4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn long_horizon_forward_limit() {
        let f = forward_price(0.0, 0.0, 200.0, &market()).unwrap();
        let want = 100.0 * 0.125f64.exp();
        assert!((f - want).abs() < 1e-9);
        assert!((f - 113.3148453066826).abs() < 1e-9);
    }

    #[test]
    fn zero_vol_forward_is_deterministic_decay() {
        let m = MarketModel::new(0.7, 1.0, 0.0, 0.05).unwrap();
        let f = forward_price(0.5, 0.8, 2.0, &m).unwrap();
        assert!((f - (1.0 + (-0.7f64 * 1.5).exp() * 0.8).exp()).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_past_date() {
        assert!(forward_price(1.0, 0.0, 0.5, &market()).is_err());
    }

    #[test]
    fn forward_sensitivity_matches_closed_form() {
        let m = market();
        for (x, h) in [(0.0, 0.5), (-0.7, 2.0), (1.1, 4.0)] {
            let step = 1e-5;
            let up = forward_price(0.0, x + step, h, &m).unwrap();
            let dn = forward_price(0.0, x - step, h, &m).unwrap();
            let fd = (up - dn) / (2.0 * step);
            let exact = (-m.kappa * h).exp() * forward_price(0.0, x, h, &m).unwrap();
            assert!((fd / exact - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn depletion_examples() {
        let p = ExtractionPlan::new(1.0, 0.05, 0.9, 0.0, 0.0).unwrap();
        assert_eq!(depletion_time(0.0, &p).unwrap(), 0.0);
        let d = depletion_time(10.0, &p).unwrap();
        assert!((d + 20.0 * 0.55f64.ln()).abs() < 1e-12);
        assert!((d - 11.956_740_6).abs() < 1e-6);

        let flat = ExtractionPlan::new(2.0, 0.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(depletion_time(8.0, &flat).unwrap(), 2.0);
    }

    #[test]
    fn depletion_rejects_infeasible_volume() {
        let p = ExtractionPlan::new(1.0, 0.05, 0.9, 0.0, 0.0).unwrap();
        let err = depletion_time(1.0 / 0.045, &p).unwrap_err();
        assert!(matches!(err, Error::InfeasibleVolume { .. }));
        assert!(depletion_time(30.0, &p).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(ExtractionPlan::new(1.0, 0.05, 1.0, 0.0, 0.0).is_err());
        assert!(ExtractionPlan::new(1.0, 0.05, 0.0, 0.0, 0.0).is_err());
        assert!(ExtractionPlan::new(-1.0, 0.05, 0.5, 0.0, 0.0).is_err());
        assert!(ExtractionPlan::new(1.0, 0.05, 0.5, 0.0, -1.0).is_err());
    }

    #[test]
    fn grid_layout() {
        let g = GridSpec::for_market(&market(), 8, GridSpec::uniform_dates(1.0, 4)).unwrap();
        assert_eq!(g.x_half_width, 3.0);
        let x = g.x_grid();
        assert_eq!(x.len(), 8);
        assert_eq!(x[g.origin_index()], 0.0);
        assert_eq!(x[0], -3.0);
        assert_eq!(g.exercise_dates, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let mut bad = g.clone();
        bad.n_points = 12;
        assert!(bad.validate().is_err());
        bad = g.clone();
        bad.exercise_dates = vec![0.0, 0.5, 0.5];
        assert!(bad.validate().is_err());
        bad.exercise_dates.clear();
        assert_eq!(bad.validate(), Err(Error::EmptySchedule));
    }
}
