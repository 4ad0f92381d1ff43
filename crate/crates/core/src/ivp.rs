//! Initial Vaccination Problem: maximize `N*(v) = ∫S∞ + ∫v` over
//! `0 ≤ v ≤ S0`, `∫v ≤ K`.
//!
//! For kernels depending only on the infectious age the optimum fills `v = S0`
//! where `β/μ` is largest ([`bathtub_allocate`]). For general kernels
//! [`optimize_projected_gradient`] returns a KKT point.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finalsize::{objective_ivp, solve_final_size};
use crate::grid::AgeDensity;
use crate::model::{Budget, EpidemicModel, StaticAllocation};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BathtubAllocation {
    /// Ratio level `s_K` at the cut node.
    pub s_threshold: f64,
    pub allocation: StaticAllocation,
    pub budget_used: f64,
    /// Fraction of `S0` taken at the cut node.
    pub boundary_fraction: f64,
    pub cut_node: Option<usize>,
    /// Fill order: ratio descending, ties by ascending node index.
    pub order: Vec<usize>,
    pub warnings: Vec<String>,
}

impl BathtubAllocation {
    /// Nodes fully vaccinated (`v = S0`).
    pub fn full_nodes(&self) -> Vec<usize> {
        let cut = self.cut_node;
        let n_full = match cut {
            Some(c) => self.order.iter().position(|&i| i == c).unwrap_or(0) + usize::from(self.boundary_fraction >= 1.0),
            None => 0,
        };
        let mut nodes = self.order[..n_full].to_vec();
        nodes.sort_unstable();
        nodes
    }
}

/// `K < min(μ/β)·∫ (β/μ) S0`, the budget range where the bathtub allocation is
/// known to be optimal.
pub fn admissible_budget_bound(model: &EpidemicModel, ratio: &AgeDensity) -> Result<f64> {
    let max_r = ratio.max();
    if max_r <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(ratio.dot(model.s0())? / max_r)
}

/// Bathtub allocation for a kernel depending only on the infectious age.
pub fn bathtub_allocate(model: &EpidemicModel, budget: Budget) -> Result<BathtubAllocation> {
    let r = model.separable_ratio()?;
    bathtub_allocate_with_ratio(model, &r, budget)
}

/// Greedy fill of `v = S0` in decreasing order of `ratio`, ending on a
/// fractional node so that `∫v = K` holds exactly under the quadrature.
pub fn bathtub_allocate_with_ratio(model: &EpidemicModel, ratio: &AgeDensity, budget: Budget) -> Result<BathtubAllocation> {
    ratio.ensure_same_grid(model.s0())?;
    let k = budget.k();
    let total = model.s0().integral();
    if k > total * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("budget {k} exceeds the susceptible population {total}")));
    }
    let r = ratio.values();
    let w = model.grid().weights();
    let s0 = model.s0().values();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));

    let mut v = vec![0.0; r.len()];
    let mut remaining = k;
    let mut cut_node = None;
    let mut boundary_fraction = 0.0;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let mass = w[i] * s0[i];
        cut_node = Some(i);
        if mass <= remaining {
            v[i] = s0[i];
            remaining -= mass;
            boundary_fraction = 1.0;
        } else {
            boundary_fraction = remaining / mass;
            v[i] = boundary_fraction * s0[i];
            remaining = 0.0;
        }
    }
    let s_threshold = match cut_node {
        Some(c) => r[c],
        None => r[order[0]],
    };
    let allocation = StaticAllocation::new(model, AgeDensity::new(model.grid().clone(), v)?)?;
    let mut warnings = Vec::new();
    let bound = admissible_budget_bound(model, ratio)?;
    if k >= bound {
        warnings.push(format!("budget {k} is not below min(mu/beta)*int(beta/mu S0) = {bound}; optimality of the bathtub allocation is not guaranteed"));
    }
    Ok(BathtubAllocation { s_threshold, budget_used: allocation.mass(), allocation, boundary_fraction, cut_node, order, warnings })
}

/// `(m, N*(v_m))` along a list of budgets.
pub fn sweep_budget(model: &EpidemicModel, budgets: &[f64]) -> Result<Vec<(f64, f64)>> {
    let r = model.separable_ratio()?;
    budgets
        .par_iter()
        .map(|&m| {
            let alloc = bathtub_allocate_with_ratio(model, &r, Budget::new(m)?)?;
            Ok((m, objective_ivp(model, &alloc.allocation)?))
        })
        .collect()
}

/// Projection onto `{0 ≤ v ≤ S0, ∫v ≤ K}` in the quadrature-weighted metric:
/// `clip(u − τ, 0, S0)` with `τ ≥ 0` chosen so that the budget binds.
pub fn project(model: &EpidemicModel, u: &[f64], budget: Budget) -> Vec<f64> {
    let s0 = model.s0().values();
    let w = model.grid().weights();
    let clip = |tau: f64| -> Vec<f64> { u.iter().zip(s0).map(|(x, s)| (x - tau).clamp(0.0, *s)).collect() };
    let mass = |v: &[f64]| -> f64 { v.iter().zip(w).map(|(a, b)| a * b).sum() };
    let k = budget.k();
    let v = clip(0.0);
    if mass(&v) <= k {
        return v;
    }
    let (mut lo, mut hi) = (0.0, u.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(&clip(mid)) > k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerOptions {
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// Finite-difference step relative to `‖S0‖_∞`.
    pub fd_step: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { tol_kkt: 1e-6, max_iter: 500, fd_step: 1e-6, max_halvings: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerReport {
    pub allocation: StaticAllocation,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
    /// Line search failed to find ascent.
    pub stalled: bool,
}

fn n_star(model: &EpidemicModel, v: &[f64]) -> Result<f64> {
    let alloc = StaticAllocation::new(model, AgeDensity::new(model.grid().clone(), v.to_vec())?)?;
    Ok(solve_final_size(model, &alloc)?.s_inf.integral() + alloc.mass())
}

/// Central differences of `N*` in each coordinate, one-sided at the box bounds.
fn gradient(model: &EpidemicModel, v: &[f64], h: f64) -> Result<Vec<f64>> {
    let s0 = model.s0().values();
    (0..v.len())
        .into_par_iter()
        .map(|i| {
            let hi = h.min(0.5 * s0[i]);
            let shifted = |d: f64| {
                let mut u = v.to_vec();
                u[i] = (u[i] + d).clamp(0.0, s0[i]);
                n_star(model, &u)
            };
            let (a, b) = if v[i] - hi < 0.0 {
                (0.0, hi)
            } else if v[i] + hi > s0[i] {
                (-hi, 0.0)
            } else {
                (-hi, hi)
            };
            let fa = if a == 0.0 { n_star(model, v)? } else { shifted(a)? };
            let fb = if b == 0.0 { n_star(model, v)? } else { shifted(b)? };
            Ok((fb - fa) / (b - a))
        })
        .collect()
}

pub fn optimize_projected_gradient(
    model: &EpidemicModel,
    budget: Budget,
    init: &StaticAllocation,
    opts: OptimizerOptions,
) -> Result<OptimizerReport> {
    if !model.grid().same_as(init.density().grid()) {
        return Err(Error::GridMismatch);
    }
    let w = model.grid().weights();
    let h = opts.fd_step * model.s0().sup_norm();
    let mut v = project(model, init.values(), budget);
    let mut f = n_star(model, &v)?;
    let mut history = vec![(0, f)];
    let mut alpha = 1.0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let g = gradient(model, &v, h)?;
        let d: Vec<f64> = g.iter().zip(w).map(|(g, w)| g / w).collect();
        let trial: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + b).collect();
        kkt = crate::grid::max_abs_diff(&project(model, &trial, budget), &v);
        if kkt <= opts.tol_kkt {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let cand = project(model, &cand, budget);
            let fc = n_star(model, &cand)?;
            if fc > f {
                v = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            stalled = true;
            break;
        }
        history.push((iterations, f));
        alpha *= 2.0;
    }
    let allocation = StaticAllocation::new(model, AgeDensity::new(model.grid().clone(), v)?)?;
    Ok(OptimizerReport { allocation, objective: f, iterations, kkt_residual: kkt, history, converged, stalled })
}

/// Random allocation with `0 ≤ v ≤ S0` and `∫v = m` exactly (up to round-off).
pub fn random_allocation_with_mass<R: Rng + ?Sized>(model: &EpidemicModel, m: f64, rng: &mut R) -> Result<StaticAllocation> {
    let total = model.s0().integral();
    if !(0.0..=total).contains(&m) {
        return Err(Error::invalid(format!("mass {m} outside [0, {total}]")));
    }
    let s0 = model.s0().values();
    let w = model.grid().weights();
    let shape: Vec<f64> = s0.iter().map(|s| rng.gen::<f64>() * s).collect();
    // find c with ∫ min(c·shape, S0) = m
    let fill = |c: f64| -> Vec<f64> { shape.iter().zip(s0).map(|(u, s)| (c * u).min(*s)).collect() };
    let mass = |v: &[f64]| -> f64 { v.iter().zip(w).map(|(a, b)| a * b).sum() };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mass(&fill(hi)) < m {
        hi *= 2.0;
        if hi > 1e12 {
            // some node got shape 0; fall back to filling uniformly
            return StaticAllocation::fraction_of_s0(model, m / total);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(&fill(mid)) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // mass(fill(hi)) ≥ m, so this only scales down
    let mut v = fill(hi);
    let total_v = mass(&v);
    if total_v > 0.0 {
        v.iter_mut().for_each(|x| *x *= m / total_v);
    }
    StaticAllocation::new(model, AgeDensity::new(model.grid().clone(), v)?)
}
