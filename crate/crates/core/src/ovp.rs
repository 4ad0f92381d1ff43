//! Time-dependent vaccination: the objective `N(ν) = ∫S∞ + ∫∫ν`, the
//! maximizing sequence `ν_ε(t,x) = (1/ε)φ(t/ε)v(x)` and the audit
//! `N(ν) ≤ N*(ν_∞)`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{simulate, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::finalsize::{objective_ivp, solve_final_size};
use crate::grid::AgeDensity;
use crate::model::{check_plan_admissible, Budget, EpidemicModel, StaticAllocation, TimeProfile, VaccinationPlan};

/// Initial cap applied to `v` before building `ν_ε`, keeping `v < S0` strictly.
pub const STRICT_CAP: f64 = 1.0 - 1e-6;

/// Each inadmissible attempt multiplies the margin `1 − cap` by 4, at most
/// this many times. Infection during the window eats part of `S0`, so a plan
/// aiming at `v = S0` needs a margin that shrinks with `ε`.
pub const CAP_BACKOFFS: usize = 9;

pub const DEFAULT_EPSILONS: [f64; 5] = [0.5, 0.2, 0.1, 0.05, 0.02];

#[derive(Debug, Clone)]
pub struct OvpEvaluation {
    pub n: f64,
    pub s_inf: AgeDensity,
    /// Doses actually delivered.
    pub nu_inf: AgeDensity,
    pub trajectory: Trajectory,
}

/// Simulates to convergence and returns `∫S∞ + ∫ν_∞`.
pub fn objective_ovp(model: &EpidemicModel, plan: &VaccinationPlan, config: &SimConfig) -> Result<OvpEvaluation> {
    let trajectory = simulate(model, plan, config)?;
    if !trajectory.converged {
        return Err(Error::NotConverged { t_end: trajectory.t_end, partial: Box::new(trajectory) });
    }
    let s_inf = trajectory.s_inf().clone();
    let nu_inf = trajectory.delivered().clone();
    Ok(OvpEvaluation { n: s_inf.integral() + nu_inf.integral(), s_inf, nu_inf, trajectory })
}

/// `ν_ε(t,x) = (1/ε)φ(t/ε)v(x)`.
pub fn mollified_plan(v: &AgeDensity, epsilon: f64) -> Result<VaccinationPlan> {
    VaccinationPlan::separable(TimeProfile::bump(0.0, epsilon)?, v.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub admissible: bool,
    /// Cap `c` in `min(v, c·S0)` for the admissible attempt (or the last one tried).
    pub cap: f64,
    pub n: Option<f64>,
    pub gap: Option<f64>,
    /// `sup |S(ε,·) − (S0 − v)|`, the state at the end of the plan in rescaled time 1.
    pub rescaled_deviation: Option<f64>,
    pub max_conservation_defect: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperBoundCheck {
    pub plan_id: String,
    pub n: f64,
    pub n_star: f64,
    /// `N*(ν_∞) − N(ν)`.
    pub slack: f64,
    /// `max_x (S∞ − S*∞)`.
    pub max_pointwise_excess: f64,
    pub passed: bool,
    pub converged: bool,
    pub max_conservation_defect: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub v: StaticAllocation,
    pub n_star: f64,
    pub epsilons: Vec<f64>,
    pub n_values: Vec<Option<f64>>,
    pub runs: Vec<EpsilonRun>,
    pub deviation_fit: Option<LinearFit>,
    pub upper_bound_checks: Vec<UpperBoundCheck>,
}

impl EquivalenceReport {
    /// `(ε, N, gap)` for admissible runs.
    pub fn gap_sequence(&self) -> Vec<(f64, f64, f64)> {
        self.runs.iter().filter_map(|r| Some((r.epsilon, r.n?, r.gap?))).collect()
    }
}

/// Builds `ν_ε` for each `ε`, certifies admissibility, evaluates `N(ν_ε)` and
/// compares with `N*(v)`. The step while the plan is active is at most `ε/50`.
pub fn maximizing_sequence(
    model: &EpidemicModel,
    v: &StaticAllocation,
    epsilons: &[f64],
    config: &SimConfig,
) -> Result<EquivalenceReport> {
    if let Some(e) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {e}")));
    }
    let n_star = objective_ivp(model, v)?;
    let target = model.s0().zip_map(v.density(), |s, a| s - a.min(s))?;
    let runs: Vec<EpsilonRun> = epsilons
        .par_iter()
        .map(|&eps| -> Result<EpsilonRun> {
            let mut cfg = config.clone();
            cfg.window_dt = Some(cfg.window_dt.unwrap_or(f64::INFINITY).min(eps / 50.0));
            let mut run = EpsilonRun {
                epsilon: eps,
                admissible: false,
                cap: STRICT_CAP,
                n: None,
                gap: None,
                rescaled_deviation: None,
                max_conservation_defect: None,
                t_end: None,
            };
            let mut margin = 1.0 - STRICT_CAP;
            let mut found = None;
            for _ in 0..=CAP_BACKOFFS {
                run.cap = 1.0 - margin;
                let capped = v.density().zip_map(model.s0(), |a, s| a.min(run.cap * s))?;
                let budget = Budget::new(capped.integral() * (1.0 + 1e-12))?;
                let plan = mollified_plan(&capped, eps)?;
                if check_plan_admissible(model, &plan, budget, &cfg)?.admissible {
                    found = Some(plan);
                    break;
                }
                margin *= 4.0;
            }
            let Some(plan) = found else { return Ok(run) };
            let eval = objective_ovp(model, &plan, &cfg)?;
            run.admissible = true;
            run.n = Some(eval.n);
            run.gap = Some((n_star - eval.n).abs());
            run.rescaled_deviation = eval.trajectory.plan_end.as_ref().map(|st| {
                crate::grid::max_abs_diff(st.s.values(), target.values())
            });
            run.max_conservation_defect = Some(eval.trajectory.diagnostics.max_conservation_defect);
            run.t_end = Some(eval.trajectory.t_end);
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = runs.iter().filter_map(|r| Some((r.epsilon, r.rescaled_deviation?))).unzip();
    Ok(EquivalenceReport {
        v: v.clone(),
        n_star,
        epsilons: epsilons.to_vec(),
        n_values: runs.iter().map(|r| r.n).collect(),
        deviation_fit: linear_fit(&xs, &ys),
        runs,
        upper_bound_checks: Vec::new(),
    })
}

/// For each plan: `N(ν)` by simulation, `N*(ν_∞)` by the final-size solver
/// with the delivered doses, and the pointwise check `S∞ ≤ S*∞`.
/// Failures are reported in the checks, not as errors.
pub fn upper_bound_audit(
    model: &EpidemicModel,
    plans: &[(String, VaccinationPlan)],
    config: &SimConfig,
) -> Result<Vec<UpperBoundCheck>> {
    let tol_eq = 1e-6 * model.s0().integral();
    let tol_pt = 1e-6 * model.s0().sup_norm();
    plans
        .par_iter()
        .map(|(id, plan)| {
            // S is non-increasing, so an unconverged end state over-estimates
            // S∞ and N(ν): the check is then only harder to pass.
            let trajectory = simulate(model, plan, config)?;
            let eval = OvpEvaluation {
                n: trajectory.s_inf().integral() + trajectory.delivered().integral(),
                s_inf: trajectory.s_inf().clone(),
                nu_inf: trajectory.delivered().clone(),
                trajectory,
            };
            let nu = eval.nu_inf.zip_map(model.s0(), |a, s| a.clamp(0.0, s))?;
            let alloc = StaticAllocation::new(model, nu)?;
            let s_star = solve_final_size(model, &alloc)?.s_inf;
            let n_star = s_star.integral() + alloc.mass();
            let slack = n_star - eval.n;
            let max_pointwise_excess = eval
                .s_inf
                .values()
                .iter()
                .zip(s_star.values())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(UpperBoundCheck {
                plan_id: id.clone(),
                n: eval.n,
                n_star,
                slack,
                max_pointwise_excess,
                passed: slack >= -tol_eq && max_pointwise_excess <= tol_pt,
                converged: eval.trajectory.converged,
                max_conservation_defect: eval.trajectory.diagnostics.max_conservation_defect,
                t_end: eval.trajectory.t_end,
            })
        })
        .collect()
}

fn random_plan<R: Rng + ?Sized>(model: &EpidemicModel, rng: &mut R) -> Result<VaccinationPlan> {
    let s0 = model.s0().values();
    let n = s0.len();
    let grid = model.grid().clone();
    let frac = rng.gen_range(0.05..0.9);
    let per_node: Vec<f64> = s0.iter().map(|s| frac * rng.gen::<f64>() * s).collect();
    if rng.gen_bool(0.5) {
        let start = rng.gen_range(0.0..4.0);
        let width = rng.gen_range(0.05..3.0);
        VaccinationPlan::separable(TimeProfile::bump(start, width)?, AgeDensity::new(grid, per_node)?)
    } else {
        let knots = rng.gen_range(3..8);
        let start = rng.gen_range(0.0..3.0);
        let mut times = vec![start];
        for _ in 1..knots {
            let last = *times.last().unwrap_or(&start);
            times.push(last + rng.gen_range(0.1..1.0));
        }
        let mut values: Vec<Vec<f64>> = (0..knots)
            .map(|k| if k == 0 || k + 1 == knots { vec![0.0; n] } else { (0..n).map(|_| rng.gen::<f64>()).collect() })
            .collect();
        // rescale each age so that ∫ν dt equals the drawn dose
        for x in 0..n {
            let mass: f64 = (1..knots).map(|k| 0.5 * (times[k] - times[k - 1]) * (values[k][x] + values[k - 1][x])).sum();
            let c = if mass > 0.0 { per_node[x] / mass } else { 0.0 };
            for row in values.iter_mut() {
                row[x] *= c;
            }
        }
        VaccinationPlan::tabulated(grid, times, values)
    }
}

/// Seeded rejection sampling of admissible plans (separable bumps and
/// tabulated rates), each certified by simulation.
pub fn random_admissible_plans<R: Rng + ?Sized>(
    model: &EpidemicModel,
    count: usize,
    rng: &mut R,
    config: &SimConfig,
) -> Result<Vec<(String, VaccinationPlan)>> {
    let budget = Budget::new(model.s0().integral())?;
    let mut plans = Vec::with_capacity(count);
    let mut attempts = 0;
    while plans.len() < count {
        attempts += 1;
        if attempts > 50 * count.max(1) {
            return Err(Error::invalid(format!("only {} admissible plans after {attempts} draws", plans.len())));
        }
        let plan = random_plan(model, rng)?;
        if check_plan_admissible(model, &plan, budget, config)?.admissible {
            plans.push((format!("plan-{}", plans.len()), plan));
        }
    }
    Ok(plans)
}
