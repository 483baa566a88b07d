use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::expm;
use crate::model::{depletion_time, forward_price, CostModel, ExtractionPlan, MarketModel, TechnicalModel};
use crate::model::PricingProblem;

/// Path count, simulation step and seed. Equal seeds give bit-identical
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt_sim: f64, seed: u64) -> Result<Self> {
        let s = Self { n_paths, dt_sim, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if !(self.dt_sim > 0.0 && self.dt_sim.is_finite()) {
            return Err(invalid("dt_sim", "must be positive"));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Observation times `0, dt, 2 dt, ..., horizon`.
    fn times(&self, horizon: f64) -> Vec<f64> {
        let steps = (horizon / self.dt_sim - 1e-9).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|k| (k as f64 * self.dt_sim).min(horizon))
            .collect()
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in samples {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var.max(0.0) / n as f64).sqrt(),
            n_paths: n,
        }
    }

    /// `|mean - reference| / std_error`, infinite when the error is zero
    /// and the values differ.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.mean - reference).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// OU log-price deviations on a common time grid, stored path after path.
#[derive(Debug, Clone)]
pub struct OuPaths {
    pub times: Vec<f64>,
    values: Vec<f64>,
}

impl OuPaths {
    pub fn n_paths(&self) -> usize {
        self.values.len() / self.times.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let n = self.times.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn at_step(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.chunks(self.times.len()).map(move |p| p[k])
    }
}

/// Exact-transition sampling of `dX = -kappa X dt + sigma dW`.
pub fn simulate_ou(x0: f64, horizon: f64, market: &MarketModel, sim: &SimConfig) -> Result<OuPaths> {
    market.validate()?;
    sim.validate()?;
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let times = sim.times(horizon);
    let steps: Vec<(f64, f64)> = times
        .windows(2)
        .map(|w| {
            let h = w[1] - w[0];
            ((-market.kappa * h).exp(), market.transition_variance(h).sqrt())
        })
        .collect();
    let mut rng = sim.rng();
    let mut values = Vec::with_capacity(sim.n_paths * times.len());
    for _ in 0..sim.n_paths {
        let mut x = x0;
        values.push(x);
        for &(decay, sd) in &steps {
            let z: f64 = rng.sample(StandardNormal);
            x = decay * x + sd * z;
            values.push(x);
        }
    }
    Ok(OuPaths { times, values })
}

/// Regime indices on a common time grid, stored path after path.
#[derive(Debug, Clone)]
pub struct ChainPaths {
    pub times: Vec<f64>,
    states: Vec<u32>,
}

impl ChainPaths {
    pub fn n_paths(&self) -> usize {
        self.states.len() / self.times.len()
    }

    pub fn path(&self, i: usize) -> &[u32] {
        let n = self.times.len();
        &self.states[i * n..(i + 1) * n]
    }

    /// Share of paths in each state at step `k`.
    pub fn frequencies(&self, k: usize, states: usize) -> Vec<f64> {
        let mut counts = vec![0usize; states];
        for p in self.states.chunks(self.times.len()) {
            counts[p[k] as usize] += 1;
        }
        let n = self.n_paths() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Event-driven simulation of the homogeneous chain with generator `A` run
/// on the learning clock `c(t) = int_0^t h_u du`.
pub fn simulate_chain(z0: usize, horizon: f64, tech: &TechnicalModel, sim: &SimConfig) -> Result<ChainPaths> {
    sim.validate()?;
    let m = tech.states();
    if z0 >= m {
        return Err(Error::IndexOutOfRange { index: z0, len: m });
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let times = sim.times(horizon);
    let marks: Vec<f64> = times.iter().map(|&t| tech.clock_increment(0.0, t)).collect();
    let a = tech.generator();
    let hold: Vec<f64> = (0..m).map(|i| -a[(i, i)]).collect();
    let up: Vec<f64> = (0..m)
        .map(|i| if i + 1 < m && hold[i] > 0.0 { a[(i, i + 1)] / hold[i] } else { 0.0 })
        .collect();

    let mut rng = sim.rng();
    let mut states = Vec::with_capacity(sim.n_paths * times.len());
    for _ in 0..sim.n_paths {
        let mut z = z0;
        let mut next = if hold[z] > 0.0 {
            rng.sample::<f64, _>(Exp1) / hold[z]
        } else {
            f64::INFINITY
        };
        for &mark in &marks {
            while next <= mark {
                z = if rng.random::<f64>() < up[z] { z + 1 } else { z - 1 };
                next += rng.sample::<f64, _>(Exp1) / hold[z];
            }
            states.push(z as u32);
        }
    }
    Ok(ChainPaths { times, states })
}

/// `exp(H_t A)` computed without the spectral route: Padé for finite
/// clocks, a null-space solve for the stationary limit.
pub fn independent_limit_transition(t: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
    let clock = tech.remaining_clock(t);
    let m = tech.states();
    if clock.is_finite() {
        return Ok(expm(&(tech.generator() * clock)));
    }
    // Solve pi A = 0 with the last equation replaced by sum(pi) = 1.
    let mut lhs = tech.generator().transpose();
    for j in 0..m {
        lhs[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let pi = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Calibration("generator has no unique invariant law".into()))?;
    Ok(DMatrix::from_fn(m, m, |_, j| pi[j]))
}

/// Composite Simpson rule with an even number of panels.
fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        sum += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

const SIMPSON_PANELS: usize = 2000;
const TABLE_PANELS: usize = 600;

/// Discounted cash flow at `(t, x)` if the reserve holds `v`.
fn cash_flow(t: f64, x: f64, v: f64, market: &MarketModel, plan: &ExtractionPlan, panels: usize) -> Result<f64> {
    if plan.alpha == 0.0 {
        return Ok(0.0);
    }
    let duration = depletion_time(v, plan)?;
    if duration == 0.0 {
        return Ok(0.0);
    }
    let start = t + plan.epsilon;
    // u >= t on the whole window, so the forward never fails here.
    let value = simpson(start, start + duration, panels, |u| {
        let fwd = forward_price(t, x, u, market).unwrap_or(f64::NAN);
        (-market.rho * (u - t)).exp() * (fwd - plan.running_cost) * plan.rate(u - start)
    });
    Ok(plan.volume_scale * value)
}

fn sample_index(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(row: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = row
        .map(|p| {
            acc += p.max(0.0);
            acc
        })
        .collect();
    let total = acc;
    cdf.iter_mut().for_each(|c| *c /= total);
    cdf
}

/// Monte Carlo reserve value: draws the final volume from the limit row of
/// `regime` and integrates the deterministic forward cash flow.
pub fn simulate_dcf(
    t: f64,
    x: f64,
    regime: usize,
    market: &MarketModel,
    plan: &ExtractionPlan,
    tech: &TechnicalModel,
    sim: &SimConfig,
) -> Result<McEstimate> {
    sim.validate()?;
    let m = tech.states();
    if regime >= m {
        return Err(Error::IndexOutOfRange { index: regime, len: m });
    }
    let limit = independent_limit_transition(t, tech)?;
    let cdf = cumulative(limit.row(regime).iter().copied());
    let flows = tech
        .volumes()
        .iter()
        .map(|&v| cash_flow(t, x, v, market, plan, SIMPSON_PANELS))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = sim.rng();
    Ok(McEstimate::from_samples(
        (0..sim.n_paths).map(|_| flows[sample_index(&cdf, rng.random::<f64>())]),
    ))
}

/// Undiscounted reserve value per terminal regime on a fine `x` table,
/// linearly interpolated.
struct ReserveTable {
    x0: f64,
    dx: f64,
    /// `values[i * m + k]`
    values: Vec<f64>,
    m: usize,
}

impl ReserveTable {
    fn new(t: f64, lo: f64, hi: f64, n: usize, market: &MarketModel, plan: &ExtractionPlan, tech: &TechnicalModel) -> Result<Self> {
        let m = tech.states();
        let limit = independent_limit_transition(t, tech)?;
        let dx = (hi - lo) / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = lo + i as f64 * dx;
            let q = tech
                .volumes()
                .iter()
                .map(|&v| cash_flow(t, x, v, market, plan, TABLE_PANELS))
                .collect::<Result<Vec<_>>>()?;
            let q = DVector::from_vec(q);
            let p = &limit * q;
            values.extend(p.iter());
        }
        Ok(Self { x0: lo, dx, values, m })
    }

    /// Lowest table node where some regime's value exceeds its cost.
    fn first_in_the_money(&self, costs: &[f64]) -> Option<f64> {
        self.values
            .chunks(self.m)
            .position(|row| row.iter().zip(costs).any(|(v, c)| v > c))
            .map(|i| self.x0 + i as f64 * self.dx)
    }

    fn eval(&self, x: f64, k: usize) -> f64 {
        let n = self.values.len() / self.m;
        let pos = ((x - self.x0) / self.dx).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let s = pos - i as f64;
        (1.0 - s) * self.values[i * self.m + k] + s * self.values[(i + 1) * self.m + k]
    }
}

const TABLE_POINTS: usize = 1201;
/// Largest mean shift of the log-price draw, in standard deviations.
const MAX_SHIFT: f64 = 8.0;

/// Monte Carlo price of investing only at the final date, from `(0, x0)`
/// in every starting regime. Terminal regimes are drawn from
/// `exp(c(T) A)` and terminal log-prices from the exact OU law.
///
/// Deep out of the money only a handful of paths would pay, and the sample
/// error would itself be unreliable. The log-price draw is therefore shifted
/// to the lowest in-the-money level and reweighted by the likelihood ratio,
/// which leaves the estimator unbiased.
pub fn european_mc(
    problem: &PricingProblem,
    x0: f64,
    sim: &SimConfig,
) -> Result<Vec<McEstimate>> {
    problem.validate()?;
    sim.validate()?;
    let market = &problem.market;
    let tech = &problem.tech;
    let horizon = problem.grid.horizon();
    let m = tech.states();
    let transition = expm(&(tech.generator() * tech.clock_increment(0.0, horizon)));
    let mean = (-market.kappa * horizon).exp() * x0;
    let sd = market.transition_variance(horizon).sqrt();
    let reach = 9.0 * sd.max(1e-12);
    let table = ReserveTable::new(horizon, mean - reach, mean + reach, TABLE_POINTS, market, &problem.plan, tech)?;
    let costs = investment_costs(&problem.costs, tech);
    let discount = (-market.rho * horizon).exp();
    let shift = table
        .first_in_the_money(&costs)
        .map_or(0.0, |x| ((x - mean) / sd.max(1e-12)).clamp(0.0, MAX_SHIFT));

    let mut out = Vec::with_capacity(m);
    for z0 in 0..m {
        let cdf = cumulative(transition.row(z0).iter().copied());
        let mut rng = sim.rng();
        rng.set_stream(z0 as u64);
        out.push(McEstimate::from_samples((0..sim.n_paths).map(|_| {
            let k = sample_index(&cdf, rng.random::<f64>());
            let z: f64 = rng.sample(StandardNormal);
            let x = mean + sd * (z + shift);
            let weight = (-shift * z - 0.5 * shift * shift).exp();
            weight * discount * (table.eval(x, k) - costs[k]).max(0.0)
        })));
    }
    Ok(out)
}

fn investment_costs(costs: &CostModel, tech: &TechnicalModel) -> Vec<f64> {
    tech.volumes().iter().map(|v| costs.c0 + costs.c1 * v).collect()
}
