//! Fourier space-time stepping for the Bermudan option to invest.
//!
//! Between exercise dates every regime's deflated value is a martingale and
//! the system `(d/dt + L) l_j + h_t sum_k A_jk l_k = 0` holds, with `L` the
//! OU generator. In a frame contracting at rate `kappa` the transformed
//! system has no `omega`-derivative, so one step from `t_{k+1}` back to `t_k`
//! is:
//!
//! 1. resample every regime at `x exp(-kappa dt)` (interpolation, not
//!    extrapolation in frequency),
//! 2. mix regimes with `exp(int h ds A)`,
//! 3. transform, multiply by `step_factor(omega, dt) exp(-kappa dt)`, and
//!    transform back.
//!
//! The `exp(-kappa dt)` is the Jacobian of the contraction: the transform of
//! `f(x exp(-kappa dt))` is `exp(kappa dt) f~(omega exp(kappa dt))`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::interp::CubicResampler;
use crate::model::{GridSpec, MarketModel, PricingProblem, TechnicalModel};
use crate::reserve::PayoffTable;

/// Share of weighted mass allowed in the outer 5% of the grid.
const ALIASING_LIMIT: f64 = 1e-3;
const BOUNDARY_TOL: f64 = 1e-9;

/// Spectral multiplier over one interval, `exp(int_0^dt psi(omega e^{kappa s}) ds)`.
pub type StepKernel = fn(omega: f64, dt: f64, market: &MarketModel) -> f64;

/// Fourier symbol of the OU generator along characteristics.
pub fn psi(omega: f64, market: &MarketModel) -> f64 {
    market.kappa - 0.5 * market.sigma * market.sigma * omega * omega
}

pub fn step_factor(omega: f64, dt: f64, market: &MarketModel) -> f64 {
    let k = market.kappa;
    let spread = market.sigma * market.sigma * omega * omega / (4.0 * k) * (2.0 * k * dt).exp_m1();
    (k * dt - spread).exp()
}

/// `exp(int_{t0}^{t1} h_s ds A)`.
pub fn regime_coupler(t0: f64, t1: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
    if !(t1 > t0) {
        return Err(invalid("t1", "coupling interval must have positive length"));
    }
    Ok(tech.spectrum().exp(tech.clock_increment(t0, t1)))
}

/// Which exercise dates allow investment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule(Vec<bool>);

impl Schedule {
    pub fn every_date(n: usize) -> Self {
        Self(vec![true; n])
    }

    /// Investment only at the final date.
    pub fn european(n: usize) -> Self {
        let mut v = vec![false; n];
        if let Some(last) = v.last_mut() {
            *last = true;
        }
        Self(v)
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self(mask)
    }

    pub fn allows(&self, date: usize) -> bool {
        self.0[date]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct IntervalOps {
    resampler: CubicResampler,
    filter: Vec<f64>,
}

/// Steps regime value arrays (`N x m`, one column per regime) backwards over
/// one interval. Operators are cached per interval length.
pub struct Propagator {
    market: MarketModel,
    x_grid: Vec<f64>,
    dx: f64,
    kernel: StepKernel,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    weights: Option<Vec<f64>>,
    outer: Vec<bool>,
    strict: bool,
    diagnostics: Vec<GridDiagnostic>,
    cache: HashMap<i64, Arc<IntervalOps>>,
}

/// Largest share of weighted mass seen near the grid edge, per regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDiagnostic {
    pub regime: usize,
    pub edge_fraction: f64,
}

impl Propagator {
    pub fn new(market: &MarketModel, grid: &GridSpec) -> Result<Self> {
        market.validate()?;
        grid.validate()?;
        let n = grid.n_points;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let x_grid = grid.x_grid();
        let sd = market.stationary_std();
        let weights = (sd > 0.0).then(|| {
            x_grid
                .iter()
                .map(|x| (-0.5 * (x / sd).powi(2)).exp())
                .collect()
        });
        let outer = x_grid
            .iter()
            .map(|x| x.abs() >= 0.95 * grid.x_half_width)
            .collect();
        Ok(Self {
            market: *market,
            dx: grid.dx(),
            x_grid,
            kernel: step_factor,
            fft,
            ifft,
            buffer: vec![Complex::default(); n],
            scratch: vec![Complex::default(); scratch_len],
            weights,
            outer,
            strict: true,
            diagnostics: Vec::new(),
            cache: HashMap::new(),
        })
    }

    pub fn with_kernel(mut self, kernel: StepKernel) -> Self {
        self.kernel = kernel;
        self.cache.clear();
        self
    }

    /// In lenient mode an edge-mass violation is recorded instead of
    /// returned as an error.
    pub fn lenient(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn diagnostics(&self) -> &[GridDiagnostic] {
        &self.diagnostics
    }

    fn ops(&mut self, dt: f64) -> Arc<IntervalOps> {
        let key = (dt * 1e12).round() as i64;
        if let Some(ops) = self.cache.get(&key) {
            return ops.clone();
        }
        let n = self.x_grid.len();
        let contraction = (-self.market.kappa * dt).exp();
        let targets: Vec<f64> = self.x_grid.iter().map(|x| x * contraction).collect();
        let resampler = CubicResampler::new(self.x_grid[0], self.dx, n, &targets);
        let base = 2.0 * PI / (n as f64 * self.dx);
        let filter = (0..n)
            .map(|k| {
                let omega = base * k.min(n - k) as f64;
                (self.kernel)(omega, dt, &self.market) * contraction / n as f64
            })
            .collect();
        let ops = Arc::new(IntervalOps { resampler, filter });
        self.cache.insert(key, ops.clone());
        ops
    }

    /// Flags arrays whose stationary-weighted mass leaks to the grid edges.
    pub fn check_aliasing(&self, values: &DMatrix<f64>) -> Result<()> {
        let Some(weights) = &self.weights else {
            return Ok(());
        };
        for (regime, col) in values.column_iter().enumerate() {
            let (mut total, mut edge) = (0.0, 0.0);
            for ((v, w), outer) in col.iter().zip(weights).zip(&self.outer) {
                let mass = v.abs() * w;
                total += mass;
                if *outer {
                    edge += mass;
                }
            }
            if total > 0.0 && edge / total > ALIASING_LIMIT {
                return Err(Error::GridTooSmall {
                    fraction: edge / total,
                    regime,
                });
            }
        }
        Ok(())
    }

    /// Continuation values at `t0+` from values at `t1`.
    pub fn propagate(&mut self, values: &DMatrix<f64>, t0: f64, t1: f64, tech: &TechnicalModel) -> Result<DMatrix<f64>> {
        let (n, m) = values.shape();
        if n != self.x_grid.len() {
            return Err(Error::DimensionMismatch {
                what: "spatial nodes",
                expected: self.x_grid.len(),
                found: n,
            });
        }
        if m != tech.states() {
            return Err(Error::DimensionMismatch {
                what: "regimes",
                expected: tech.states(),
                found: m,
            });
        }
        if let Err(err) = self.check_aliasing(values) {
            let Error::GridTooSmall { fraction, regime } = err else {
                return Err(err);
            };
            if self.strict {
                return Err(err);
            }
            match self.diagnostics.iter_mut().find(|d| d.regime == regime) {
                Some(d) => d.edge_fraction = d.edge_fraction.max(fraction),
                None => {
                    log::debug!("regime index {regime}: {fraction:.3e} of the value mass sits on the grid edge");
                    self.diagnostics.push(GridDiagnostic {
                        regime,
                        edge_fraction: fraction,
                    });
                }
            }
        }
        let coupler = regime_coupler(t0, t1, tech)?;
        let ops = self.ops(t1 - t0);

        let mut moved = DMatrix::zeros(n, m);
        for j in 0..m {
            ops.resampler
                .apply(values.column(j).as_slice(), moved.column_mut(j).as_mut_slice());
        }
        let mut out = moved * coupler.transpose();

        // Two real regimes per complex transform: the filter is real and
        // even, so it maps the real and imaginary parts separately.
        let mut j = 0;
        while j < m {
            let pair = j + 1 < m;
            for i in 0..n {
                let im = if pair { out[(i, j + 1)] } else { 0.0 };
                self.buffer[i] = Complex::new(out[(i, j)], im);
            }
            self.fft
                .process_with_scratch(&mut self.buffer, &mut self.scratch);
            for (b, g) in self.buffer.iter_mut().zip(&ops.filter) {
                *b *= *g;
            }
            self.ifft
                .process_with_scratch(&mut self.buffer, &mut self.scratch);
            for i in 0..n {
                out[(i, j)] = self.buffer[i].re;
                if pair {
                    out[(i, j + 1)] = self.buffer[i].im;
                }
            }
            j += 2;
        }
        Ok(out)
    }
}

/// One backward step over `[t0, t1]`; see [`Propagator`].
pub fn propagate_interval(
    values: &DMatrix<f64>,
    t0: f64,
    t1: f64,
    market: &MarketModel,
    tech: &TechnicalModel,
    grid: &GridSpec,
) -> Result<DMatrix<f64>> {
    Propagator::new(market, grid)?.propagate(values, t0, t1, tech)
}

/// Pointwise `max(continuation, payoff)`.
pub fn apply_exercise(continuation: &DMatrix<f64>, payoff: &DMatrix<f64>) -> DMatrix<f64> {
    continuation.zip_map(payoff, f64::max)
}

/// Deflated option values on the (date, regime, x) lattice.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    times: Vec<f64>,
    x_grid: Vec<f64>,
    states: usize,
    theta: f64,
    rho: f64,
    schedule: Schedule,
    values: Vec<f64>,
    continuation: Vec<f64>,
    diagnostics: Vec<GridDiagnostic>,
}

impl ValueSurface {
    /// Edge-mass warnings raised during a lenient solve.
    pub fn diagnostics(&self) -> &[GridDiagnostic] {
        &self.diagnostics
    }

    fn block(&self) -> usize {
        self.states * self.x_grid.len()
    }

    fn offset(&self, date: usize, regime: usize, node: usize) -> usize {
        date * self.block() + regime * self.x_grid.len() + node
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn origin_index(&self) -> usize {
        self.x_grid.len() / 2
    }

    pub fn spot(&self, node: usize) -> f64 {
        (self.theta + self.x_grid[node]).exp()
    }

    /// Deflated value after the exercise decision at `date`.
    pub fn value(&self, date: usize, regime: usize, node: usize) -> f64 {
        self.values[self.offset(date, regime, node)]
    }

    /// Deflated value of waiting, just after `date`.
    pub fn continuation(&self, date: usize, regime: usize, node: usize) -> f64 {
        self.continuation[self.offset(date, regime, node)]
    }

    /// `exp(rho t) * value`.
    pub fn undeflated(&self, date: usize, regime: usize, node: usize) -> f64 {
        (self.rho * self.times[date]).exp() * self.value(date, regime, node)
    }

    /// `N x m` view of the values at one date.
    pub fn values_at(&self, date: usize) -> DMatrixView<'_, f64> {
        let start = date * self.block();
        DMatrixView::from_slice(&self.values[start..start + self.block()], self.x_grid.len(), self.states)
    }

    pub fn continuation_at(&self, date: usize) -> DMatrixView<'_, f64> {
        let start = date * self.block();
        DMatrixView::from_slice(
            &self.continuation[start..start + self.block()],
            self.x_grid.len(),
            self.states,
        )
    }
}

/// Backward induction driver.
pub struct FstSolver<'a> {
    problem: &'a PricingProblem,
    schedule: Schedule,
    kernel: StepKernel,
    strict: bool,
}

impl<'a> FstSolver<'a> {
    pub fn new(problem: &'a PricingProblem) -> Self {
        Self {
            problem,
            schedule: Schedule::every_date(problem.grid.exercise_dates.len()),
            kernel: step_factor,
            strict: false,
        }
    }

    /// Fail on the first edge-mass violation instead of recording it.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Replaces the spectral step multiplier (used for negative controls).
    pub fn with_kernel(mut self, kernel: StepKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn solve(&self) -> Result<ValueSurface> {
        let p = self.problem;
        p.validate()?;
        let dates = &p.grid.exercise_dates;
        if dates.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if self.schedule.len() != dates.len() {
            return Err(Error::DimensionMismatch {
                what: "exercise schedule",
                expected: dates.len(),
                found: self.schedule.len(),
            });
        }
        let x_grid = p.grid.x_grid();
        let (n, m) = (x_grid.len(), p.tech.states());
        let payoff = PayoffTable::new(&p.market, &p.plan, &p.costs, &p.tech, &x_grid, p.grid.quadrature_points)?;
        let mut propagator = Propagator::new(&p.market, &p.grid)?.with_kernel(self.kernel);
        if !self.strict {
            propagator = propagator.lenient();
        }

        let block = n * m;
        let mut values = vec![0.0; dates.len() * block];
        let mut continuation = vec![0.0; dates.len() * block];

        let last = dates.len() - 1;
        let mut current = if self.schedule.allows(last) {
            payoff.exercise(dates[last], &p.tech)?
        } else {
            DMatrix::zeros(n, m)
        };
        values[last * block..].copy_from_slice(current.as_slice());

        for k in (0..last).rev() {
            let cont = propagator.propagate(&current, dates[k], dates[k + 1], &p.tech)?;
            continuation[k * block..(k + 1) * block].copy_from_slice(cont.as_slice());
            current = if self.schedule.allows(k) {
                apply_exercise(&cont, &payoff.exercise(dates[k], &p.tech)?)
            } else {
                cont
            };
            values[k * block..(k + 1) * block].copy_from_slice(current.as_slice());
        }
        log::debug!("solved {} dates x {} regimes x {} nodes", dates.len(), m, n);

        Ok(ValueSurface {
            times: dates.clone(),
            x_grid,
            states: m,
            theta: p.market.theta,
            rho: p.market.rho,
            schedule: self.schedule.clone(),
            values,
            continuation,
            diagnostics: propagator.diagnostics().to_vec(),
        })
    }
}

/// Bermudan solve with exercise allowed on every date.
pub fn solve(problem: &PricingProblem) -> Result<ValueSurface> {
    FstSolver::new(problem).solve()
}

/// Critical spot price per (date, regime); `None` where investing is never
/// optimal on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseBoundary {
    times: Vec<f64>,
    states: usize,
    entries: Vec<Option<f64>>,
}

impl ExerciseBoundary {
    pub fn from_entries(times: Vec<f64>, states: usize, entries: Vec<Option<f64>>) -> Result<Self> {
        if entries.len() != times.len() * states {
            return Err(Error::DimensionMismatch {
                what: "boundary entries",
                expected: times.len() * states,
                found: entries.len(),
            });
        }
        Ok(Self {
            times,
            states,
            entries,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, date: usize, regime: usize) -> Option<f64> {
        self.entries[date * self.states + regime]
    }

    /// Boundary of one regime through time.
    pub fn regime_path(&self, regime: usize) -> Vec<Option<f64>> {
        (0..self.times.len()).map(|d| self.get(d, regime)).collect()
    }
}

/// Lowest grid spot where investing beats waiting, refined linearly between
/// the bracketing nodes.
pub fn extract_boundary(surface: &ValueSurface, problem: &PricingProblem) -> Result<ExerciseBoundary> {
    let x = surface.x_grid();
    let payoff = PayoffTable::new(
        &problem.market,
        &problem.plan,
        &problem.costs,
        &problem.tech,
        x,
        problem.grid.quadrature_points,
    )?;
    let m = surface.states();
    let mut entries = Vec::with_capacity(surface.times().len() * m);
    for (d, &t) in surface.times().iter().enumerate() {
        if !surface.schedule().allows(d) {
            entries.extend(std::iter::repeat_n(None, m));
            continue;
        }
        let net = payoff.net_exercise(t, &problem.tech)?;
        let cont = surface.continuation_at(d);
        for j in 0..m {
            let gap = |i: usize| net[(i, j)] - cont[(i, j)];
            let first = (0..x.len()).find(|&i| {
                let (e, c) = (net[(i, j)], cont[(i, j)]);
                e > 0.0 && e - c >= -BOUNDARY_TOL * e.abs().max(c.abs())
            });
            entries.push(first.map(|i| {
                let x_star = if i == 0 {
                    x[0]
                } else {
                    let (g0, g1) = (gap(i - 1), gap(i).max(0.0));
                    if g0 < 0.0 && g1 > g0 {
                        x[i - 1] + (x[i] - x[i - 1]) * (-g0 / (g1 - g0))
                    } else {
                        x[i]
                    }
                };
                (problem.market.theta + x_star).exp()
            }));
        }
    }
    ExerciseBoundary::from_entries(surface.times().to_vec(), m, entries)
}
