use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fst::{regime_coupler, Schedule};
use crate::model::{MarketModel, PricingProblem};
use crate::reserve::PayoffTable;

/// Spatial resolution and largest time step of the explicit lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    /// Odd, so that `x = 0` is a node.
    pub n_x: usize,
    pub x_half_width: f64,
    pub max_dt: f64,
}

impl LatticeSpec {
    /// Largest stable step for the given market, times `0.9`.
    pub fn stable(n_x: usize, x_half_width: f64, market: &MarketModel) -> Result<Self> {
        let mut spec = Self {
            n_x,
            x_half_width,
            max_dt: f64::INFINITY,
        };
        spec.max_dt = 0.9 * spec.stability_limit(market)?;
        Ok(spec)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_half_width / (self.n_x - 1) as f64
    }

    fn x_grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_x)
            .map(|i| -self.x_half_width + i as f64 * dx)
            .collect()
    }

    /// Largest explicit step with nonnegative stencil weights.
    pub fn stability_limit(&self, market: &MarketModel) -> Result<f64> {
        if self.n_x < 5 || self.n_x % 2 == 0 {
            return Err(invalid("n_x", "must be odd and at least 5"));
        }
        if !(self.x_half_width > 0.0) {
            return Err(invalid("x_half_width", "must be positive"));
        }
        let dx = self.dx();
        let diffusion = 0.5 * market.sigma * market.sigma;
        if market.kappa * self.x_half_width * dx > 2.0 * diffusion {
            return Err(invalid(
                "n_x",
                "drift dominates diffusion on this grid; central differences lose positivity",
            ));
        }
        Ok(dx * dx / (2.0 * diffusion))
    }
}

/// One explicit step `u <- u + dt (D u'' - kappa x u')`, edges extended
/// linearly.
fn explicit_step(u: &mut [f64], scratch: &mut [f64], xs: &[f64], dt: f64, dx: f64, market: &MarketModel) {
    let n = u.len();
    let d = 0.5 * market.sigma * market.sigma * dt / (dx * dx);
    let c = market.kappa * dt / (2.0 * dx);
    for i in 1..n - 1 {
        let drift = c * xs[i];
        scratch[i] = u[i] + d * (u[i + 1] - 2.0 * u[i] + u[i - 1]) - drift * (u[i + 1] - u[i - 1]);
    }
    scratch[0] = 2.0 * scratch[1] - scratch[2];
    scratch[n - 1] = 2.0 * scratch[n - 2] - scratch[n - 3];
    u.copy_from_slice(scratch);
}

/// Explicit finite-difference Bermudan pricer on `(x, regime)`. Returns the
/// time-zero value of each regime at `x = 0`.
///
/// The spatial operator acts the same way on every regime and the coupling
/// has no `x` dependence, so the two commute and the regime coupler is
/// applied once per exercise interval.
pub fn lattice_bermudan(problem: &PricingProblem, spec: &LatticeSpec, schedule: &Schedule) -> Result<Vec<f64>> {
    problem.validate()?;
    let market = &problem.market;
    let limit = spec.stability_limit(market)?;
    if spec.max_dt > limit {
        return Err(Error::Unstable {
            dt: spec.max_dt,
            limit,
        });
    }
    let dates = &problem.grid.exercise_dates;
    if dates.is_empty() {
        return Err(Error::EmptySchedule);
    }
    if schedule.len() != dates.len() {
        return Err(Error::DimensionMismatch {
            what: "exercise schedule",
            expected: dates.len(),
            found: schedule.len(),
        });
    }
    let xs = spec.x_grid();
    let dx = spec.dx();
    let (n, m) = (xs.len(), problem.tech.states());
    let payoff = PayoffTable::new(
        market,
        &problem.plan,
        &problem.costs,
        &problem.tech,
        &xs,
        problem.grid.quadrature_points,
    )?;

    let last = dates.len() - 1;
    let mut values = if schedule.allows(last) {
        payoff.exercise(dates[last], &problem.tech)?
    } else {
        DMatrix::zeros(n, m)
    };
    let mut scratch = vec![0.0; n];
    for k in (0..last).rev() {
        let interval = dates[k + 1] - dates[k];
        let steps = (interval / spec.max_dt).ceil().max(1.0) as usize;
        let dt = interval / steps as f64;
        for j in 0..m {
            let mut col = values.column_mut(j);
            let u = col.as_mut_slice();
            for _ in 0..steps {
                explicit_step(u, &mut scratch, &xs, dt, dx, market);
            }
        }
        values = values * regime_coupler(dates[k], dates[k + 1], &problem.tech)?.transpose();
        if schedule.allows(k) {
            values = values.zip_map(&payoff.exercise(dates[k], &problem.tech)?, f64::max);
        }
    }
    let origin = n / 2;
    Ok((0..m).map(|j| values[(origin, j)]).collect())
}

/// Solves a tridiagonal system in place (Thomas algorithm).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / beta;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// One theta-scheme step of `u_t + L u = 0` backwards over `dt`
/// (`theta = 1` implicit Euler, `theta = 1/2` Crank–Nicolson).
fn theta_step(u: &mut [f64], xs: &[f64], dx: f64, dt: f64, theta: f64, market: &MarketModel) {
    let n = u.len();
    let d = 0.5 * market.sigma * market.sigma / (dx * dx);
    let c = market.kappa / (2.0 * dx);
    // L u_i = lo_i u_{i-1} + mid_i u_i + up_i u_{i+1}
    let coeffs = |i: usize| {
        let drift = c * xs[i];
        (d + drift, -2.0 * d, d - drift)
    };
    let interior = n - 2;
    let (mut lower, mut diag, mut upper) = (vec![0.0; interior], vec![0.0; interior], vec![0.0; interior]);
    let mut rhs = vec![0.0; interior];
    let explicit = (1.0 - theta) * dt;
    let implicit = theta * dt;
    for r in 0..interior {
        let i = r + 1;
        let (lo, mid, up) = coeffs(i);
        rhs[r] = u[i] + explicit * (lo * u[i - 1] + mid * u[i] + up * u[i + 1]);
        lower[r] = -implicit * lo;
        diag[r] = 1.0 - implicit * mid;
        upper[r] = -implicit * up;
    }
    // Edge values are frozen at their previous values during the solve.
    rhs[0] -= lower[0] * u[0];
    rhs[interior - 1] -= upper[interior - 1] * u[n - 1];
    lower[0] = 0.0;
    upper[interior - 1] = 0.0;
    thomas(&lower, &diag, &upper, &mut rhs);
    u[1..n - 1].copy_from_slice(&rhs);
    u[0] = 2.0 * u[1] - u[2];
    u[n - 1] = 2.0 * u[n - 2] - u[n - 3];
}

/// Crank–Nicolson solution of the uncoupled problem `(d/dt + L) u = 0`
/// over one interval of length `dt`, on a uniform grid. The first step is
/// replaced by two implicit half steps to damp the payoff kink.
pub fn cn_propagate(values: &[f64], x_grid: &[f64], dt: f64, market: &MarketModel, substeps: usize) -> Result<Vec<f64>> {
    market.validate()?;
    if x_grid.len() != values.len() || values.len() < 5 {
        return Err(Error::DimensionMismatch {
            what: "spatial nodes",
            expected: x_grid.len(),
            found: values.len(),
        });
    }
    if substeps == 0 || !(dt > 0.0) {
        return Err(invalid("substeps", "need a positive step count and interval"));
    }
    let dx = x_grid[1] - x_grid[0];
    let h = dt / substeps as f64;
    let mut u = values.to_vec();
    theta_step(&mut u, x_grid, dx, 0.5 * h, 1.0, market);
    theta_step(&mut u, x_grid, dx, 0.5 * h, 1.0, market);
    for _ in 1..substeps {
        theta_step(&mut u, x_grid, dx, h, 0.5, market);
    }
    Ok(u)
}
