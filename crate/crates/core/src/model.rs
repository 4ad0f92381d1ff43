//! Problem data and the two kinds of vaccination controls.
//!
//! [`StaticAllocation`] is a pre-epidemic allocation `v(x)` with `0 ≤ v ≤ S0`;
//! [`VaccinationPlan`] is a time-dependent rate `ν(t,x) ≥ 0` that vanishes
//! after a finite horizon.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{self, SimConfig};
use crate::error::{Error, Result};
use crate::grid::{AgeDensity, AgeGrid, Kernel};

/// Relative tolerance for deciding that a kernel only depends on its column.
pub const SEPARABLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EpidemicModel {
    grid: Arc<AgeGrid>,
    beta: Kernel,
    mu: AgeDensity,
    s0: AgeDensity,
    i0: AgeDensity,
}

impl EpidemicModel {
    /// Builds a model satisfying the standing assumptions: `β > 0`, `μ > 0`,
    /// `S0 > 0`, `I0 ≥ 0` and `∫ I0 > 0`.
    pub fn new(beta: Kernel, mu: AgeDensity, s0: AgeDensity, i0: AgeDensity) -> Result<Self> {
        let model = Self::new_relaxed(beta, mu, s0, i0)?;
        if !model.beta.is_strictly_positive() {
            return Err(Error::Assumption("beta(x,y) must be > 0 everywhere".into()));
        }
        if model.i0.integral() <= 0.0 {
            return Err(Error::Assumption("I0 must not vanish identically".into()));
        }
        Ok(model)
    }

    /// Like [`EpidemicModel::new`] but admits `β ≥ 0` and `I0 ≡ 0`, the
    /// boundary cases used for sanity checks (no contagion, no infection).
    pub fn new_relaxed(beta: Kernel, mu: AgeDensity, s0: AgeDensity, i0: AgeDensity) -> Result<Self> {
        let grid = beta.grid().clone();
        for d in [&mu, &s0, &i0] {
            if !grid.same_as(d.grid()) {
                return Err(Error::GridMismatch);
            }
        }
        if let Some(i) = mu.values().iter().position(|&m| m <= 0.0) {
            return Err(Error::Assumption(format!("mu must be > 0 (node {i})")));
        }
        if let Some(i) = s0.values().iter().position(|&s| s <= 0.0) {
            return Err(Error::Assumption(format!("S0 must be > 0 (node {i})")));
        }
        if let Some(i) = i0.values().iter().position(|&s| s < 0.0) {
            return Err(Error::Assumption(format!("I0 must be >= 0 (node {i})")));
        }
        Ok(EpidemicModel { grid, beta, mu, s0, i0 })
    }

    /// Constant β, μ, S0, I0 on `[0, a_max]`.
    pub fn homogeneous(a_max: f64, n: usize, beta: f64, mu: f64, s0: f64, i0: f64) -> Result<Self> {
        let g = AgeGrid::uniform(a_max, n)?;
        let model = Self::new_relaxed(
            Kernel::constant(g.clone(), beta)?,
            AgeDensity::constant(g.clone(), mu)?,
            AgeDensity::constant(g.clone(), s0)?,
            AgeDensity::constant(g, i0)?,
        )?;
        Ok(model)
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn beta(&self) -> &Kernel {
        &self.beta
    }

    pub fn mu(&self) -> &AgeDensity {
        &self.mu
    }

    pub fn s0(&self) -> &AgeDensity {
        &self.s0
    }

    pub fn i0(&self) -> &AgeDensity {
        &self.i0
    }

    pub fn with_i0(&self, i0: AgeDensity) -> Result<Self> {
        Self::new_relaxed(self.beta.clone(), self.mu.clone(), self.s0.clone(), i0)
    }

    pub fn with_beta(&self, beta: Kernel) -> Result<Self> {
        Self::new_relaxed(beta, self.mu.clone(), self.s0.clone(), self.i0.clone())
    }

    /// `β(x,y)/μ(y)`.
    pub fn beta_over_mu(&self) -> Kernel {
        let inv_mu: Vec<f64> = self.mu.values().iter().map(|m| 1.0 / m).collect();
        self.beta.scale_columns(&inv_mu).expect("grid checked at construction")
    }

    pub fn is_separable(&self) -> bool {
        self.beta.is_separable(SEPARABLE_TOL)
    }

    /// `r(y) = β(y)/μ(y)` for a kernel that only depends on the infectious age.
    pub fn separable_ratio(&self) -> Result<AgeDensity> {
        let defect = self.beta.separability_defect();
        if defect > SEPARABLE_TOL {
            return Err(Error::NotSeparable { max_rel_dev: defect });
        }
        let row = self.beta.row(0);
        let values = row.iter().zip(self.mu.values()).map(|(b, m)| b / m).collect();
        AgeDensity::new(self.grid.clone(), values)
    }

    /// Age-averaged infectivity over `μ`: `(1/A)∫ β(x,y) dx / μ(y)`. Equals
    /// [`EpidemicModel::separable_ratio`] when the kernel is separable.
    pub fn column_mean_ratio(&self) -> AgeDensity {
        let n = self.grid.n();
        let w = self.grid.weights();
        let a = self.grid.a_max();
        let values = (0..n)
            .map(|j| (0..n).map(|i| w[i] * self.beta.get(i, j)).sum::<f64>() / a / self.mu.values()[j])
            .collect();
        AgeDensity::new(self.grid.clone(), values).expect("finite by construction")
    }

    pub fn total_population(&self) -> f64 {
        self.s0.integral() + self.i0.integral()
    }

    /// Tolerance on undershoot of `S` below zero: `1e-9·max S0`.
    pub fn tol_s(&self) -> f64 {
        1e-9 * self.s0.sup_norm()
    }
}

/// Pre-epidemic allocation `v` with `0 ≤ v ≤ S0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StaticAllocation {
    v: AgeDensity,
}

impl StaticAllocation {
    /// Checks the pointwise bounds `0 ≤ v ≤ S0` (with a round-off margin).
    pub fn new(model: &EpidemicModel, v: AgeDensity) -> Result<Self> {
        if !model.grid.same_as(v.grid()) {
            return Err(Error::GridMismatch);
        }
        let tol = 1e-12 * model.s0.sup_norm();
        for (i, (&x, &s)) in v.values().iter().zip(model.s0.values()).enumerate() {
            if x < -tol || x > s + tol {
                return Err(Error::invalid(format!("allocation violates 0 <= v <= S0 at node {i}: v = {x}, S0 = {s}")));
            }
        }
        let clipped = v.zip_map(&model.s0, |x, s| x.clamp(0.0, s))?;
        Ok(StaticAllocation { v: clipped })
    }

    pub fn zero(model: &EpidemicModel) -> Self {
        StaticAllocation { v: AgeDensity::zeros(model.grid.clone()) }
    }

    /// `c·S0` for `c ∈ [0, 1]`.
    pub fn fraction_of_s0(model: &EpidemicModel, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("fraction must lie in [0,1], got {c}")));
        }
        Ok(StaticAllocation { v: model.s0.scale(c) })
    }

    pub fn density(&self) -> &AgeDensity {
        &self.v
    }

    pub fn values(&self) -> &[f64] {
        self.v.values()
    }

    pub fn mass(&self) -> f64 {
        self.v.integral()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget(f64);

impl Budget {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::invalid(format!("budget must be finite and >= 0, got {k}")));
        }
        Ok(Budget(k))
    }

    pub fn k(self) -> f64 {
        self.0
    }
}

/// Scalar time profile of a separable plan `ν(t,x) = profile(t)·density(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeProfile {
    /// `(1/w)·φ((t − start)/w)` with `φ(u) = 2cos²(π(u − ½))` on `[0,1]`; unit mass.
    CosineBump { start: f64, width: f64 },
    /// `e^{−rate·t}` on `[0, cutoff]`, zero afterwards.
    Exponential { rate: f64, cutoff: f64 },
}

impl TimeProfile {
    pub fn bump(start: f64, width: f64) -> Result<Self> {
        if !(start.is_finite() && start >= 0.0 && width.is_finite() && width > 0.0) {
            return Err(Error::invalid(format!("bump needs start >= 0 and width > 0, got ({start}, {width})")));
        }
        Ok(TimeProfile::CosineBump { start, width })
    }

    pub fn exponential(rate: f64, cutoff: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0 && cutoff.is_finite() && cutoff >= 0.0) {
            return Err(Error::invalid(format!("exponential profile needs rate, cutoff >= 0, got ({rate}, {cutoff})")));
        }
        Ok(TimeProfile::Exponential { rate, cutoff })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::CosineBump { start, width } => {
                let u = (t - start) / width;
                if (0.0..=1.0).contains(&u) {
                    let c = (PI * (u - 0.5)).cos();
                    2.0 * c * c / width
                } else {
                    0.0
                }
            }
            TimeProfile::Exponential { rate, cutoff } => {
                if (0.0..=cutoff).contains(&t) {
                    (-rate * t).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫₀^∞ profile(t) dt` in closed form.
    pub fn total_mass(&self) -> f64 {
        match *self {
            TimeProfile::CosineBump { .. } => 1.0,
            TimeProfile::Exponential { rate, cutoff } => {
                if rate == 0.0 {
                    cutoff
                } else {
                    -(-rate * cutoff).exp_m1() / rate
                }
            }
        }
    }

    pub fn horizon(&self) -> f64 {
        match *self {
            TimeProfile::CosineBump { start, width } => start + width,
            TimeProfile::Exponential { cutoff, .. } => cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanShape {
    None,
    Separable { profile: TimeProfile, density: AgeDensity },
    /// Piecewise linear in `t` between `times`, zero outside `[times[0], times[last]]`.
    /// `values[k]` holds the age profile at `times[k]`.
    Tabulated { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaccinationPlan {
    grid: Arc<AgeGrid>,
    shape: PlanShape,
    horizon: f64,
}

impl VaccinationPlan {
    pub fn none(grid: Arc<AgeGrid>) -> Self {
        VaccinationPlan { grid, shape: PlanShape::None, horizon: 0.0 }
    }

    pub fn separable(profile: TimeProfile, density: AgeDensity) -> Result<Self> {
        if !density.is_nonnegative() {
            return Err(Error::invalid("plan density must be non-negative"));
        }
        Ok(VaccinationPlan {
            grid: density.grid().clone(),
            horizon: profile.horizon(),
            shape: PlanShape::Separable { profile, density },
        })
    }

    pub fn tabulated(grid: Arc<AgeGrid>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("tabulated plan needs one age row per time"));
        }
        if times[0] < 0.0 || times.windows(2).any(|p| p[1] <= p[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("tabulated plan times must be finite, >= 0 and strictly increasing"));
        }
        for row in &values {
            grid.check_len(row.len())?;
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("tabulated plan values must be finite and >= 0"));
            }
        }
        let horizon = *times.last().unwrap();
        Ok(VaccinationPlan { grid, shape: PlanShape::Tabulated { times, values }, horizon })
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn shape(&self) -> &PlanShape {
        &self.shape
    }

    /// Time after which `ν ≡ 0`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_none(&self) -> bool {
        matches!(self.shape, PlanShape::None)
    }

    /// `ν(t, ·)` written into `out`.
    pub fn rate_into(&self, t: f64, out: &mut [f64]) {
        match &self.shape {
            PlanShape::None => out.iter_mut().for_each(|o| *o = 0.0),
            PlanShape::Separable { profile, density } => {
                let p = profile.eval(t);
                for (o, d) in out.iter_mut().zip(density.values()) {
                    *o = p * d;
                }
            }
            PlanShape::Tabulated { times, values } => {
                let last = times.len() - 1;
                if t < times[0] || t > times[last] {
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else if last == 0 || t == times[last] {
                    out.copy_from_slice(&values[last]);
                } else {
                    let k = times.partition_point(|&s| s <= t) - 1;
                    let th = (t - times[k]) / (times[k + 1] - times[k]);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = (1.0 - th) * values[k][j] + th * values[k + 1][j];
                    }
                }
            }
        }
    }

    pub fn rate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n()];
        self.rate_into(t, &mut out);
        out
    }

    pub fn total_mass(&self) -> f64 {
        nu_infinity(self).integral()
    }
}

/// `ν_∞(x) = ∫₀^∞ ν(t,x) dt`: closed form for separable plans, exact trapezoid
/// for the piecewise-linear tabulated ones.
pub fn nu_infinity(plan: &VaccinationPlan) -> AgeDensity {
    let grid = plan.grid.clone();
    match &plan.shape {
        PlanShape::None => AgeDensity::zeros(grid),
        PlanShape::Separable { profile, density } => density.scale(profile.total_mass()),
        PlanShape::Tabulated { times, values } => {
            let n = grid.n();
            let mut acc = vec![0.0; n];
            for k in 1..times.len() {
                let dt = times[k] - times[k - 1];
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += 0.5 * dt * (values[k - 1][j] + values[k][j]);
                }
            }
            AgeDensity::new(grid, acc).expect("finite plan values")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    Negative { node: usize, value: f64 },
    AboveS0 { node: usize, value: f64, s0: f64 },
    Budget { used: f64, k: f64 },
    SusceptibleNegative { t: f64, node: usize, value: f64 },
    Clipped { t: f64, mass: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub violations: Vec<Violation>,
    /// `∫ v` for static allocations, `∫∫ ν` for plans.
    pub mass: f64,
    /// Smallest susceptible value over the simulated window (plans only).
    pub min_s: Option<f64>,
}

/// Pointwise `0 ≤ v ≤ S0` and `∫ v ≤ K(1 + 1e−9)`.
pub fn check_static_admissible(model: &EpidemicModel, v: &AgeDensity, budget: Budget) -> Result<AdmissibilityReport> {
    v.ensure_same_grid(model.s0())?;
    let mut violations = Vec::new();
    for (node, (&x, &s)) in v.values().iter().zip(model.s0.values()).enumerate() {
        if x < 0.0 {
            violations.push(Violation::Negative { node, value: x });
        } else if x > s * (1.0 + 1e-12) {
            violations.push(Violation::AboveS0 { node, value: x, s0: s });
        }
    }
    let used = v.integral();
    if used > budget.k() * (1.0 + 1e-9) {
        violations.push(Violation::Budget { used, k: budget.k() });
    }
    Ok(AdmissibilityReport { admissible: violations.is_empty(), violations, mass: used, min_s: None })
}

/// Certifies membership of a plan in the admissible set on the discrete
/// trajectory: `S ≥ −tol_S` while the plan is active, no positivity clipping,
/// and total mass within budget. Past the horizon `S` cannot change sign, so
/// only `[0, horizon]` is simulated.
pub fn check_plan_admissible(
    model: &EpidemicModel,
    plan: &VaccinationPlan,
    budget: Budget,
    config: &SimConfig,
) -> Result<AdmissibilityReport> {
    if !model.grid.same_as(plan.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut violations = Vec::new();
    let mass = plan.total_mass();
    if mass > budget.k() * (1.0 + 1e-9) {
        violations.push(Violation::Budget { used: mass, k: budget.k() });
    }
    let window = dynamics::simulate_window(model, plan, config, plan.horizon())?;
    let tol_s = model.tol_s();
    if window.min_s.value < -tol_s {
        violations.push(Violation::SusceptibleNegative { t: window.min_s.t, node: window.min_s.node, value: window.min_s.value });
    }
    for clip in &window.clips {
        violations.push(Violation::Clipped { t: clip.t, mass: clip.mass });
    }
    Ok(AdmissibilityReport { admissible: violations.is_empty(), violations, mass, min_s: Some(window.min_s.value) })
}
