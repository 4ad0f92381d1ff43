//! Final-size equation
//!
//! ```text
//! S∞(x) = (S0 − v)(x)·exp( ∫ β(x,y)/μ(y)·(S∞(y) − I0(y) − S0(y) + v(y)) dy )
//! ```
//!
//! solved without time integration, by monotone sandwich iteration in general
//! and by a scalar root in `σ` when `β` only depends on the infectious age.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{max_abs_diff, AgeDensity, Kernel};
use crate::model::{EpidemicModel, StaticAllocation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalSizeOptions {
    /// Absolute gap tolerance relative to `‖S0‖_∞`.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Iterations without gap decrease before giving up.
    pub stall_window: usize,
}

impl Default for FinalSizeOptions {
    fn default() -> Self {
        FinalSizeOptions { rel_tol: 1e-12, max_iter: 10_000, stall_window: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalSizeSolution {
    pub s_inf: AgeDensity,
    pub iterations: usize,
    /// `‖s_inf − Φ(s_inf)‖_∞`.
    pub residual: f64,
    pub lower: AgeDensity,
    pub upper: AgeDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarSummary {
    pub sigma0: f64,
    pub sigma_inf: f64,
    pub eta: f64,
}

/// The map `Φ` for a fixed allocation, with its exponent shift precomputed.
pub(crate) struct FinalSizeMap {
    k: Kernel,
    cap: Vec<f64>,
    shift: Vec<f64>,
}

impl FinalSizeMap {
    pub(crate) fn new(model: &EpidemicModel, v: &StaticAllocation) -> Result<Self> {
        if !model.grid().same_as(v.density().grid()) {
            return Err(Error::GridMismatch);
        }
        let k = model.beta_over_mu();
        let cap: Vec<f64> = model.s0().values().iter().zip(v.values()).map(|(s, v)| (s - v).max(0.0)).collect();
        let base: Vec<f64> = model.i0().values().iter().zip(&cap).map(|(i, c)| i + c).collect();
        let shift = k.apply_slice(&base);
        Ok(FinalSizeMap { k, cap, shift })
    }

    pub(crate) fn apply(&self, s: &[f64]) -> Vec<f64> {
        let ks = self.k.apply_slice(s);
        (0..s.len()).map(|x| self.cap[x] * (ks[x] - self.shift[x]).exp()).collect()
    }
}

pub fn solve_final_size(model: &EpidemicModel, v: &StaticAllocation) -> Result<FinalSizeSolution> {
    solve_final_size_with(model, v, FinalSizeOptions::default())
}

pub fn solve_final_size_with(model: &EpidemicModel, v: &StaticAllocation, opts: FinalSizeOptions) -> Result<FinalSizeSolution> {
    let phi = FinalSizeMap::new(model, v)?;
    let tol = opts.rel_tol * model.s0().sup_norm();
    let mut lower = vec![0.0; phi.cap.len()];
    let mut upper = phi.cap.clone();
    let mut gap = max_abs_diff(&lower, &upper);
    let mut best = gap;
    let mut since_best = 0;
    let mut iterations = 0;
    while gap > tol {
        if iterations >= opts.max_iter || since_best >= opts.stall_window {
            return Err(Error::SolverStall { iterations, gap });
        }
        lower = phi.apply(&lower);
        upper = phi.apply(&upper);
        iterations += 1;
        gap = max_abs_diff(&lower, &upper);
        if gap < best {
            best = gap;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    let mid: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let residual = max_abs_diff(&mid, &phi.apply(&mid));
    let g = model.grid().clone();
    Ok(FinalSizeSolution {
        s_inf: AgeDensity::new(g.clone(), mid)?,
        iterations,
        residual,
        lower: AgeDensity::new(g.clone(), lower)?,
        upper: AgeDensity::new(g, upper)?,
    })
}

/// `f(x) = x e^{−x}`.
pub fn f_sigma(x: f64) -> f64 {
    x * (-x).exp()
}

/// `σ0 = ∫ r(S0 − v)` and `η = exp(−∫ r I0)` with `r = β/μ` (separable kernels only).
fn sigma0_eta(model: &EpidemicModel, v: &StaticAllocation, r: &AgeDensity) -> Result<(f64, f64)> {
    let free = model.s0().axpy(-1.0, v.density())?.map(|x| x.max(0.0));
    Ok((r.dot(&free)?, (-r.dot(model.i0())?).exp()))
}

/// Root `σ∞ ≤ σ0` of `f(σ∞) = f(σ0)·η`, with the final bracket.
pub fn solve_sigma_inf(sigma0: f64, eta: f64) -> Result<(f64, f64, f64, usize)> {
    if !(sigma0 >= 0.0 && sigma0.is_finite() && eta > 0.0 && eta <= 1.0) {
        return Err(Error::Bracket(format!("sigma0 = {sigma0}, eta = {eta}")));
    }
    let target = f_sigma(sigma0) * eta;
    let g = |x: f64| f_sigma(x) - target;
    let (mut lo, mut hi) = (0.0, sigma0.min(1.0));
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::Bracket(format!("f - target has no sign change on [0, {hi}]")));
    }
    let mut iterations = 0;
    while hi - lo > f64::EPSILON * hi.max(f64::MIN_POSITIVE) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok((0.5 * (lo + hi), lo, hi, iterations))
}

/// Scalar reduction for kernels depending on the infectious age only:
/// `S∞ = (S0 − v)·e^{σ∞ − σ0}·η`.
pub fn solve_final_size_separable(model: &EpidemicModel, v: &StaticAllocation) -> Result<(FinalSizeSolution, ScalarSummary)> {
    let r = model.separable_ratio()?;
    let (sigma0, eta) = sigma0_eta(model, v, &r)?;
    let (sigma_inf, lo, hi, iterations) = solve_sigma_inf(sigma0, eta)?;
    let free = model.s0().axpy(-1.0, v.density())?.map(|x| x.max(0.0));
    let at = |s: f64| free.scale((s - sigma0).exp() * eta);
    let s_inf = at(sigma_inf);
    let residual = max_abs_diff(s_inf.values(), &FinalSizeMap::new(model, v)?.apply(s_inf.values()));
    Ok((
        FinalSizeSolution { s_inf, iterations, residual, lower: at(lo), upper: at(hi) },
        ScalarSummary { sigma0, sigma_inf, eta },
    ))
}

/// `σ0`, `σ∞` and `η` for a separable model.
pub fn scalar_summary(model: &EpidemicModel, v: &StaticAllocation) -> Result<ScalarSummary> {
    let r = model.separable_ratio()?;
    let (sigma0, eta) = sigma0_eta(model, v, &r)?;
    let (sigma_inf, ..) = solve_sigma_inf(sigma0, eta)?;
    Ok(ScalarSummary { sigma0, sigma_inf, eta })
}

/// `N*(v) = ∫S∞ + ∫v`. For separable kernels the fixed point is checked
/// against `m + (∫S0 − m)e^{σ∞−σ0}η`.
pub fn objective_ivp(model: &EpidemicModel, v: &StaticAllocation) -> Result<f64> {
    let sol = solve_final_size(model, v)?;
    let m = v.mass();
    let n_star = sol.s_inf.integral() + m;
    if model.is_separable() {
        let s = scalar_summary(model, v)?;
        let closed = m + (model.s0().integral() - m) * (s.sigma_inf - s.sigma0).exp() * s.eta;
        let tol = 1e-9 * model.s0().integral().max(1.0);
        if (closed - n_star).abs() > tol {
            return Err(Error::Inconsistent(format!("fixed point gives {n_star}, closed form {closed}")));
        }
    }
    Ok(n_star)
}
