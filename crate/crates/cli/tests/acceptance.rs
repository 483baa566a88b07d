//! Acceptance suite over the shipped scenario file. Prints one PASS/FAIL
//! line per criterion. Exits non-zero when a criterion fails that is not
//! listed in `KNOWN_SHORTFALLS`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use resopt_cli::config::{RunConfig, ScenarioConfig};
use resopt_cli::run;
use resopt_core::oracle::{cn_propagate, european_mc, lattice_bermudan, LatticeSpec, SimConfig};
use resopt_core::*;

const SHIPPED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/paper_sec5.cfg");

// 1. calibration
const INVARIANT_TOL: f64 = 1e-10;
const VARIANCE_RTOL: f64 = 1e-8;
const CALIBRATION_SECONDS: f64 = 1.0;
// 2. learning distribution
const LEARNING_SECONDS: f64 = 1.0;
// 3. transform layer
const QUADRATURE_TOL: f64 = 1e-10;
const QUADRATURE_PANELS: usize = 20_000;
const OMEGA_SAMPLES: usize = 200;
const PROPAGATION_RTOL: f64 = 1e-3;
/// Absolute allowance as a share of the largest terminal value; covers
/// FFT roundoff and the deep out-of-the-money tail below the kink.
const PROPAGATION_FLOOR: f64 = 1e-8;
const FD_REFINEMENT: usize = 4;
const FD_SUBSTEPS_PER_YEAR: f64 = 20_000.0;
const TRANSFORM_SECONDS: f64 = 10.0;
// 4. pricing oracles
const MC_PATHS: usize = 1_000_000;
const MC_MAX_Z: f64 = 3.0;
const LATTICE_POINTS: usize = 801;
const LATTICE_RTOL: f64 = 0.01;
const PRICING_SECONDS: f64 = 300.0;
// 5. boundaries
const BAND: usize = 5;
const BOUNDARY_RTOL: f64 = 1e-9;
const BOUNDARY_SECONDS: f64 = 120.0;
// 6. value decay; values below this share of the initial value are noise
const VALUE_ATOL_SHARE: f64 = 1e-9;

/// Criteria expected to fail; see the README.
const KNOWN_SHORTFALLS: &[u32] = &[5, 6];

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn main() {
    let started = Instant::now();
    let cfg = RunConfig::load(Path::new(SHIPPED)).expect("shipped config loads");
    let studies: Vec<Study> = cfg.scenarios.iter().map(Study::new).collect();

    let outcomes = vec![
        calibration_fidelity(&cfg),
        learning_shape(&cfg),
        transform_layer(&cfg),
        pricing_oracles(&cfg, &studies),
        boundary_shape(&studies),
        wait_and_learn(&studies),
        determinism(),
    ];

    println!("\nacceptance criteria ({:.1?} total)", started.elapsed());
    let mut unexpected = 0;
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && KNOWN_SHORTFALLS.contains(&o.id) {
            " [documented shortfall]"
        } else {
            ""
        };
        println!("criterion {} ({}): {verdict}{note}; {}", o.id, o.title, o.detail);
        if !o.passed && !KNOWN_SHORTFALLS.contains(&o.id) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed unexpectedly");
        std::process::exit(1);
    }
}

fn scenario<'a>(cfg: &'a RunConfig, name: &str) -> &'a ScenarioConfig {
    cfg.scenarios.iter().find(|s| s.name == name).expect("shipped scenario")
}

fn calibration_fidelity(cfg: &RunConfig) -> Outcome {
    let slow = scenario(cfg, "slow_learning_no_costs").prior.unwrap();
    let fast = scenario(cfg, "fast_learning_no_costs").prior.unwrap();
    // the raw variance pairs, in the same units as the mean
    let raw = |tp: f64| PriorSpec {
        mu: 1e9,
        sigma0_sq: 3e8,
        sigma_tp_sq: tp,
        ..slow
    };
    let mut worst_inv: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut errors = Vec::new();
    for prior in [slow, fast, raw(2.5e8), raw(1e8)] {
        let t0 = Instant::now();
        let result = calibrate(&prior, LearningMode::Calibrated);
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        let (tech, _) = match result {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("mu={} {}->{}: {e}", prior.mu, prior.sigma0_sq, prior.sigma_tp_sq));
                continue;
            }
        };
        let target = discretized_prior(&prior, &build_state_grid(&prior).unwrap()).unwrap();
        let inv = tech.spectrum().invariant();
        for (a, b) in inv.iter().zip(&target) {
            worst_inv = worst_inv.max((a - b).abs());
        }
        let mid = tech.mid_state();
        let (_, v0) = conditional_moments(0.0, &tech, mid).unwrap();
        let (_, vt) = conditional_moments(prior.t_prime, &tech, mid).unwrap();
        worst_var = worst_var
            .max((v0 / prior.sigma0_sq - 1.0).abs())
            .max((vt / prior.sigma_tp_sq - 1.0).abs());
    }
    Outcome {
        id: 1,
        title: "calibration fidelity",
        passed: errors.is_empty()
            && worst_inv <= INVARIANT_TOL
            && worst_var <= VARIANCE_RTOL
            && slowest < CALIBRATION_SECONDS,
        detail: format!(
            "invariant max-norm {worst_inv:.2e} (<= {INVARIANT_TOL:.0e}), variance rel err {worst_var:.2e} (<= {VARIANCE_RTOL:.0e}), slowest {slowest:.3}s, four priors{}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join("; ")) }
        ),
    }
}

fn row_stats(tech: &TechnicalModel, t: f64) -> (f64, f64) {
    let mid = tech.mid_state();
    let row = limit_transition(t, tech).unwrap().row(mid).transpose();
    let vols = tech.volumes();
    let mean: f64 = row.iter().zip(vols).map(|(p, v)| p * v).sum();
    let var: f64 = row.iter().zip(vols).map(|(p, v)| p * (v - mean).powi(2)).sum();
    (row[mid], var)
}

fn learning_shape(cfg: &RunConfig) -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut peaks = Vec::new();
    let mut parts = Vec::new();
    for name in ["slow_learning_no_costs", "fast_learning_no_costs"] {
        let s = scenario(cfg, name);
        let (tech, _) = s.technical_model().unwrap();
        let t_prime = s.prior.unwrap().t_prime;
        let (p0, v0) = row_stats(&tech, 0.0);
        let (p1, v1) = row_stats(&tech, t_prime);
        ok &= p1 > p0 && v1 < v0;
        peaks.push(p1);
        parts.push(format!("{}: mid mass {p0:.4}->{p1:.4}, var {v0:.4}->{v1:.4}", &name[..4]));
    }
    ok &= peaks[1] > peaks[0];
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        id: 2,
        title: "learning distribution",
        passed: ok && secs < LEARNING_SECONDS,
        detail: format!("{}; {secs:.3}s", parts.join("; ")),
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for k in 1..panels {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

fn transform_layer(cfg: &RunConfig) -> Outcome {
    let t0 = Instant::now();
    let s = scenario(cfg, "slow_learning_no_costs");
    let market = s.market;
    let grid = s.grid.to_spec(&market).unwrap();
    let omega_max = std::f64::consts::PI / grid.dx();

    let mut worst_quad: f64 = 0.0;
    for dt in [1.0 / 255.0, 0.1, 1.0] {
        for k in 0..=OMEGA_SAMPLES {
            let omega = omega_max * k as f64 / OMEGA_SAMPLES as f64;
            let integral = simpson(|u| psi(omega * (market.kappa * u).exp(), &market), 0.0, dt, QUADRATURE_PANELS);
            let factor = step_factor(omega, dt, &market);
            // subnormal factors carry too few digits for a log comparison
            let err = if factor.is_normal() {
                (integral - factor.ln()).abs() / integral.abs().max(1.0)
            } else if integral < f64::MIN_POSITIVE.ln() {
                0.0
            } else {
                f64::INFINITY
            };
            worst_quad = worst_quad.max(err);
        }
    }

    // one regime, exercise payoff at the horizon, stepped back once
    let tech = TechnicalModel::new(vec![s.prior.unwrap().mu], DMatrix::zeros(1, 1), 0.0, 0.0).unwrap();
    let horizon = grid.horizon();
    let xs = grid.x_grid();
    let payoff = PayoffTable::new(&market, &s.plan, &s.costs, &tech, &xs, grid.quadrature_points).unwrap();
    let terminal = payoff.exercise(horizon, &tech).unwrap();
    let n_fine = (xs.len() - 1) * FD_REFINEMENT + 1;
    let fine_dx = grid.dx() / FD_REFINEMENT as f64;
    let fine_x: Vec<f64> = (0..n_fine).map(|i| xs[0] + i as f64 * fine_dx).collect();
    let fine_payoff = PayoffTable::new(&market, &s.plan, &s.costs, &tech, &fine_x, grid.quadrature_points).unwrap();
    let fine_terminal = fine_payoff.exercise(horizon, &tech).unwrap();

    let scale = terminal.amax();
    let mut worst_prop: f64 = 0.0;
    let mut checked = 0;
    for dt in [horizon / (grid.exercise_dates.len() - 1) as f64, 0.1] {
        let fst = propagate_interval(&terminal, horizon - dt, horizon, &market, &tech, &grid).unwrap();
        let substeps = (dt * FD_SUBSTEPS_PER_YEAR).ceil() as usize;
        let fd = cn_propagate(fine_terminal.column(0).as_slice(), &fine_x, dt, &market, substeps).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let reference = fd[i * FD_REFINEMENT];
            if x.abs() <= 0.5 * grid.x_half_width {
                let gap = (fst[(i, 0)] - reference).abs();
                worst_prop = worst_prop.max(gap / (reference.abs() + PROPAGATION_FLOOR * scale));
                checked += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        id: 3,
        title: "transform layer",
        passed: worst_quad <= QUADRATURE_TOL && worst_prop <= PROPAGATION_RTOL && secs < TRANSFORM_SECONDS,
        detail: format!(
            "step_factor vs quadrature {worst_quad:.2e} (<= {QUADRATURE_TOL:.0e}), single-regime step vs {FD_REFINEMENT}x-refined Crank-Nicolson {worst_prop:.2e} over {checked} nodes with |x| <= 1.5 (<= {PROPAGATION_RTOL:.0e} relative, floor {PROPAGATION_FLOOR:.0e} of max payoff), {secs:.2}s"
        ),
    }
}

/// Everything the boundary and decay criteria need from one full solve.
struct Study {
    name: String,
    problem: PricingProblem,
    boundary: ExerciseBoundary,
    /// Undeflated value at `x = 0`, mid-state, per date.
    mid_values: Vec<f64>,
    seconds: f64,
}

impl Study {
    fn new(s: &ScenarioConfig) -> Self {
        let t0 = Instant::now();
        let problem = s.prepare().unwrap().problem;
        let surface = solve(&problem).unwrap();
        let boundary = extract_boundary(&surface, &problem).unwrap();
        let mid = problem.tech.mid_state();
        let origin = surface.origin_index();
        let mid_values = (0..surface.times().len())
            .map(|d| surface.undeflated(d, mid, origin))
            .collect();
        Self {
            name: s.name.clone(),
            problem,
            boundary,
            mid_values,
            seconds: t0.elapsed().as_secs_f64(),
        }
    }
}

fn pricing_oracles(cfg: &RunConfig, studies: &[Study]) -> Outcome {
    let mut seconds = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut worst_at = String::new();
    let mut over = 0;
    let mut worst_rel: f64 = 0.0;
    for (s, study) in cfg.scenarios.iter().zip(studies) {
        let t0 = Instant::now();
        let p = &study.problem;
        let dates = p.grid.exercise_dates.len();
        let european = FstSolver::new(p).with_schedule(Schedule::european(dates)).solve().unwrap();
        let origin = european.origin_index();
        let sim = SimConfig::new(MC_PATHS, s.validation.dt_sim, s.validation.seed).unwrap();
        let mc = european_mc(p, 0.0, &sim).unwrap();
        for (j, est) in mc.iter().enumerate() {
            let z = est.z_score(european.value(0, j, origin));
            if z > MC_MAX_Z {
                over += 1;
            }
            if z > worst_z {
                worst_z = z;
                worst_at = format!("{} regime {}", s.name, j + 1);
            }
        }
        drop(european);

        let spec = LatticeSpec::stable(LATTICE_POINTS, p.grid.x_half_width, &p.market).unwrap();
        let lattice = lattice_bermudan(p, &spec, &Schedule::every_date(dates)).unwrap();
        let mid = p.tech.mid_state();
        let fst = study.mid_values[0];
        worst_rel = worst_rel.max((fst - lattice[mid]).abs() / lattice[mid].abs());
        seconds += t0.elapsed().as_secs_f64() + study.seconds;
    }
    Outcome {
        id: 4,
        title: "pricing oracle agreement",
        passed: over == 0 && worst_rel <= LATTICE_RTOL && seconds < PRICING_SECONDS,
        detail: format!(
            "European vs MC ({MC_PATHS} paths): max |z| {worst_z:.2} at {worst_at}, {over} of {} above {MC_MAX_Z}; Bermudan vs {LATTICE_POINTS}-node lattice max rel gap {worst_rel:.2e} (<= {LATTICE_RTOL}); {seconds:.1}s",
            studies.len() * studies[0].problem.tech.states()
        ),
    }
}

fn study<'a>(studies: &'a [Study], name: &str) -> &'a Study {
    studies.iter().find(|s| s.name == name).expect("shipped scenario")
}

/// Dates with a decision, i.e. all but the terminal date.
fn decision_dates(b: &ExerciseBoundary) -> usize {
    b.times().len() - 1
}

fn argmax(path: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in path.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn boundary_shape(studies: &[Study]) -> Outcome {
    let mid = studies[0].problem.tech.mid_state();
    let band = mid - BAND..=mid + BAND;
    let slowest = studies.iter().map(|s| s.seconds).fold(0.0, f64::max);

    // (a) non-increasing in regime at every decision date
    let mut a_bad = 0;
    let mut a_total = 0;
    for s in studies {
        let b = &s.boundary;
        for d in 0..decision_dates(b) {
            a_total += 1;
            let pts: Vec<f64> = band.clone().filter_map(|j| b.get(d, j)).collect();
            if pts.windows(2).any(|w| w[1] > w[0] * (1.0 + BOUNDARY_RTOL)) {
                a_bad += 1;
            }
        }
    }

    // (b) no-learning boundary non-increasing in time
    let mut b_bad = 0;
    for name in ["no_learning_costs", "no_learning_no_costs"] {
        let b = &study(studies, name).boundary;
        for j in band.clone() {
            let path = &b.regime_path(j)[..decision_dates(b)];
            let pts: Vec<f64> = path.iter().flatten().copied().collect();
            b_bad += pts.windows(2).filter(|w| w[1] > w[0] * (1.0 + BOUNDARY_RTOL)).count();
        }
    }

    // (c) interior maximum for low-estimate regimes, fast turning no later
    let mut c_bad = Vec::new();
    for cost in ["costs", "no_costs"] {
        let slow = &study(studies, &format!("slow_learning_{cost}")).boundary;
        let fast = &study(studies, &format!("fast_learning_{cost}")).boundary;
        for j in mid - BAND..mid {
            let mut peaks = Vec::new();
            for b in [slow, fast] {
                let last = decision_dates(b) - 1;
                let path = &b.regime_path(j)[..=last];
                let peak = argmax(path);
                let interior = match (peak, path[0], path[last]) {
                    (Some(k), Some(first), Some(end)) => {
                        let top = path[k].unwrap();
                        k > 0 && k < last && top > first && top > end
                    }
                    _ => false,
                };
                if !interior {
                    c_bad.push(format!("{cost} regime {} has no interior peak", j + 1));
                }
                peaks.push(peak.unwrap_or(usize::MAX));
            }
            if peaks[1] > peaks[0] {
                c_bad.push(format!("{cost} regime {}: fast peak date {} after slow {}", j + 1, peaks[1], peaks[0]));
            }
        }
    }

    // (d) running cost raises every present point
    let mut d_bad = 0;
    let mut d_total = 0;
    for learning in ["slow_learning", "fast_learning", "no_learning"] {
        let with = &study(studies, &format!("{learning}_costs")).boundary;
        let without = &study(studies, &format!("{learning}_no_costs")).boundary;
        for d in 0..decision_dates(with) {
            for j in 0..with.states() {
                match (without.get(d, j), with.get(d, j)) {
                    (Some(lo), Some(hi)) => {
                        d_total += 1;
                        if hi < lo * (1.0 - BOUNDARY_RTOL) {
                            d_bad += 1;
                        }
                    }
                    (None, Some(_)) => d_bad += 1,
                    _ => {}
                }
            }
        }
    }

    let passed = a_bad == 0 && b_bad == 0 && c_bad.is_empty() && d_bad == 0 && slowest < BOUNDARY_SECONDS;
    Outcome {
        id: 5,
        title: "boundary shape",
        passed,
        detail: format!(
            "(a) {} of {a_total} scenario-dates non-increasing over regimes {}..{}; (b) {b_bad} time increases without learning; (c) {}; (d) {d_bad} violations over {d_total} points; slowest solve {slowest:.1}s",
            a_total - a_bad,
            mid - BAND + 1,
            mid + BAND + 1,
            if c_bad.is_empty() { "interior peaks everywhere, fast no later".to_string() } else { c_bad.join(", ") },
        ),
    }
}

/// Share of the initial value lost by each date.
fn lost_share(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| 1.0 - v / values[0]).collect()
}

fn wait_and_learn(studies: &[Study]) -> Outcome {
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for cost in ["no_costs", "costs"] {
        let slow = &study(studies, &format!("slow_learning_{cost}")).mid_values;
        let fast = &study(studies, &format!("fast_learning_{cost}")).mid_values;
        let none = &study(studies, &format!("no_learning_{cost}")).mid_values;
        for (label, v) in [("slow", slow), ("fast", fast)] {
            let tol = VALUE_ATOL_SHARE * v[0];
            let rises = v.windows(2).filter(|w| w[1] > w[0] + tol).count();
            if rises > 0 {
                failures.push(format!("{cost}: {label} value rises at {rises} dates"));
            }
        }
        let (ls, lf) = (lost_share(slow), lost_share(fast));
        let behind = ls.iter().zip(&lf).skip(1).filter(|(s, f)| f < s).count();
        if behind > 0 {
            failures.push(format!("{cost}: fast has lost a smaller share than slow at {behind} dates"));
        }
        let decay = |v: &[f64]| v[0] - v[v.len() - 1];
        let hi = none.iter().copied().fold(f64::MIN, f64::max);
        let lo = none.iter().copied().fold(f64::MAX, f64::min);
        let spread = hi - lo;
        let (ds, df) = (decay(slow), decay(fast));
        if spread >= ds.min(df) {
            failures.push(format!("{cost}: no-learning spread {spread:.4e} >= learning decay {:.4e}", ds.min(df)));
        }
        parts.push(format!("{cost}: decay slow {ds:.4e}, fast {df:.4e}, no-learning spread {spread:.4e}"));
    }
    Outcome {
        id: 6,
        title: "wait-and-learn decay",
        passed: failures.is_empty(),
        detail: format!(
            "{}{}",
            parts.join("; "),
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join("; ")) }
        ),
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let t0 = Instant::now();
    let cfg = RunConfig::load(Path::new(SHIPPED)).unwrap();
    let tmp = std::env::temp_dir().join(format!("resopt-acceptance-{}", std::process::id()));
    let (a, b) = (tmp.join("a"), tmp.join("b"));
    run(&cfg, &[], Some(&a)).unwrap();
    run(&cfg, &[], Some(&b)).unwrap();
    let files = files_under(&a);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(f).ok() != std::fs::read(b.join(f.strip_prefix(&a).unwrap())).ok())
        .map(|f| f.display().to_string())
        .collect();
    let same_listing = files_under(&b).len() == files.len();
    std::fs::remove_dir_all(&tmp).ok();
    Outcome {
        id: 7,
        title: "determinism",
        passed: differing.is_empty() && same_listing && !files.is_empty(),
        detail: format!(
            "{} artifacts from two full runs, {} differ; {:.1}s",
            files.len(),
            differing.len(),
            t0.elapsed().as_secs_f64()
        ),
    }
}
