//! Expected discounted value of the reserve.
//!
//! The cash-flow integral depends on the valuation date only through
//! `u - t`, so for every volume state it is a fixed function `Q_j(x)` of the
//! log-price deviation. The reserve value in regime `i` is then
//! `p_i(t, x) = sum_j [exp(H_t A)]_{ij} Q_j(x)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{depletion_time, CostModel, ExtractionPlan, GridSpec, MarketModel, TechnicalModel};
use crate::quadrature::GaussLegendre;

/// `exp(H_t A)`: law of the eventual state given the state at `t`. Without
/// learning decay the rows are the invariant law of `A`.
pub fn limit_transition(t: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(invalid("t", "must be non-negative"));
    }
    let clock = tech.remaining_clock(t);
    if clock.is_infinite() {
        Ok(tech.spectrum().stationary_matrix())
    } else {
        Ok(tech.spectrum().exp(clock))
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Quadrature weight times discount, extraction rate and volume scale.
    weight: f64,
    /// `theta + sigma^2/(4 kappa) (1 - exp(-2 kappa s))`.
    log_level: f64,
    /// `exp(-kappa s)`.
    decay: f64,
}

/// Precomputed quadrature of the per-volume cash-flow integrals.
#[derive(Debug, Clone)]
pub struct ReserveValuator {
    running_cost: f64,
    states: Vec<Vec<Node>>,
}

impl ReserveValuator {
    pub fn new(
        market: &MarketModel,
        plan: &ExtractionPlan,
        volumes: &[f64],
        quadrature_points: usize,
    ) -> Result<Self> {
        market.validate()?;
        plan.validate()?;
        if quadrature_points == 0 {
            return Err(invalid("quadrature_points", "must be positive"));
        }
        let rule = GaussLegendre::new(quadrature_points);
        let mut states = Vec::with_capacity(volumes.len());
        for &v in volumes {
            // No extraction, no cash flow, whatever the volume.
            if plan.alpha == 0.0 {
                states.push(Vec::new());
                continue;
            }
            let duration = depletion_time(v, plan)?;
            let start = plan.epsilon;
            let nodes = if duration == 0.0 {
                Vec::new()
            } else {
                rule.on_interval(start, start + duration)
                    .map(|(s, w)| Node {
                        weight: plan.volume_scale
                            * w
                            * (-market.rho * s).exp()
                            * plan.rate(s - start),
                        log_level: market.theta
                            + market.sigma * market.sigma / (4.0 * market.kappa)
                                * -(-2.0 * market.kappa * s).exp_m1(),
                        decay: (-market.kappa * s).exp(),
                    })
                    .collect()
            };
            states.push(nodes);
        }
        Ok(Self {
            running_cost: plan.running_cost,
            states,
        })
    }

    pub fn states(&self) -> usize {
        self.states.len()
    }

    /// `Q_j(x)`: discounted cash flow when the reserve is known to hold the
    /// volume of state `j`.
    pub fn cash_flow_value(&self, state: usize, x: f64) -> f64 {
        self.states[state]
            .iter()
            .map(|n| n.weight * ((n.log_level + n.decay * x).exp() - self.running_cost))
            .sum()
    }

    pub fn cash_flow_values(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.states(), |j, _| self.cash_flow_value(j, x))
    }

    /// `Q` on a spatial grid, one column per volume state.
    pub fn cash_flow_grid(&self, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), self.states(), |i, j| self.cash_flow_value(j, xs[i]))
    }
}

/// Reserve value `p^(regime)(t, x)`; `regime` is zero-based.
pub fn reserve_value(
    t: f64,
    x: f64,
    regime: usize,
    market: &MarketModel,
    plan: &ExtractionPlan,
    tech: &TechnicalModel,
    grid: &GridSpec,
) -> Result<f64> {
    if regime >= tech.states() {
        return Err(Error::IndexOutOfRange {
            index: regime,
            len: tech.states(),
        });
    }
    let valuator = ReserveValuator::new(market, plan, tech.volumes(), grid.quadrature_points)?;
    let row = limit_transition(t, tech)?.row(regime).transpose();
    Ok(row.dot(&valuator.cash_flow_values(x)))
}

/// Immediate-exercise values on a fixed spatial grid.
#[derive(Debug, Clone)]
pub struct PayoffTable {
    cash_flows: DMatrix<f64>,
    costs: DVector<f64>,
    rho: f64,
}

impl PayoffTable {
    pub fn new(
        market: &MarketModel,
        plan: &ExtractionPlan,
        costs: &CostModel,
        tech: &TechnicalModel,
        xs: &[f64],
        quadrature_points: usize,
    ) -> Result<Self> {
        costs.validate()?;
        let valuator = ReserveValuator::new(market, plan, tech.volumes(), quadrature_points)?;
        Ok(Self {
            cash_flows: valuator.cash_flow_grid(xs),
            costs: DVector::from_iterator(
                tech.states(),
                tech.volumes().iter().map(|v| costs.c0 + costs.c1 * v),
            ),
            rho: market.rho,
        })
    }

    pub fn costs(&self) -> &DVector<f64> {
        &self.costs
    }

    /// Reserve values (`N x m`) for a given limit-transition matrix.
    pub fn reserve_with(&self, limit: &DMatrix<f64>) -> DMatrix<f64> {
        &self.cash_flows * limit.transpose()
    }

    pub fn reserve(&self, t: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
        Ok(self.reserve_with(&limit_transition(t, tech)?))
    }

    /// Unclipped deflated exercise value `exp(-rho t) (p - I)`.
    pub fn net_exercise_with(&self, t: f64, limit: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = self.reserve_with(limit);
        let deflator = (-self.rho * t).exp();
        for (j, mut col) in p.column_iter_mut().enumerate() {
            let cost = self.costs[j];
            col.apply(|v| *v = deflator * (*v - cost));
        }
        p
    }

    pub fn net_exercise(&self, t: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
        Ok(self.net_exercise_with(t, &limit_transition(t, tech)?))
    }

    /// Deflated option payoff `exp(-rho t) (p - I)_+`.
    pub fn exercise(&self, t: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
        let mut v = self.net_exercise(t, tech)?;
        v.apply(|p| *p = p.max(0.0));
        Ok(v)
    }
}
