//! Time integration of the vaccinated SIR system
//!
//! ```text
//! ∂t S = −S·∫β(x,y)I(y)dy − ν      ∂t V = ν
//! ∂t I =  S·∫β(x,y)I(y)dy − μI     ∂t R = μI
//! ```
//!
//! with classical RK4. `V` and `R` are carried along so that `S+I+V+R` is
//! conserved node by node. When a step would drive `S` below `−tol_S` the
//! step is retried on halved sub-steps; if that keeps failing the
//! vaccination rate is clipped to what is left of `S` and the clip is recorded.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{AgeDensity, Kernel};
use crate::model::{EpidemicModel, VaccinationPlan};

pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Convergence threshold on `∫ I`.
    pub eps_i: f64,
    /// Convergence threshold on `‖∂t S‖_∞`.
    pub eps_ds: f64,
    pub snapshot_stride: usize,
    /// Step used while the plan is active, when finer than `dt`.
    pub window_dt: Option<f64>,
}

impl SimConfig {
    /// `dt = 1e−3`, `t_max = 200/min μ`, `eps_i = 1e−10·∫(S0+I0)`, `eps_ds = 1e−12`.
    pub fn for_model(model: &EpidemicModel) -> Self {
        SimConfig {
            dt: 1e-3,
            t_max: 200.0 / model.mu().min(),
            eps_i: 1e-10 * model.total_population(),
            eps_ds: 1e-12,
            snapshot_stride: 100,
            window_dt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.dt) || !pos(self.t_max) || !pos(self.eps_i) || !(self.eps_ds.is_finite() && self.eps_ds >= 0.0) {
            return Err(Error::invalid(format!("simulation config needs dt, t_max, eps_i > 0: {self:?}")));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::invalid("snapshot_stride must be >= 1"));
        }
        if let Some(w) = self.window_dt {
            if !pos(w) {
                return Err(Error::invalid(format!("window_dt must be > 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub s: AgeDensity,
    pub i: AgeDensity,
    pub v_cum: AgeDensity,
    pub r_cum: AgeDensity,
}

impl State {
    pub fn initial(model: &EpidemicModel) -> Self {
        let z = AgeDensity::zeros(model.grid().clone());
        State { t: 0.0, s: model.s0().clone(), i: model.i0().clone(), v_cum: z.clone(), r_cum: z }
    }

    fn pack(&self) -> Vec<f64> {
        [self.s.values(), self.i.values(), self.v_cum.values(), self.r_cum.values()].concat()
    }

    fn unpack(&self, t: f64, y: Vec<f64>) -> State {
        let n = self.s.len();
        let g = self.s.grid().clone();
        // callers check finiteness first
        let make = |k: usize| AgeDensity::new(g.clone(), y[k * n..(k + 1) * n].to_vec()).expect("finite state");
        State { t, s: make(0), i: make(1), v_cum: make(2), r_cum: make(3) }
    }

    /// `‖(S+I+V+R) − (S0+I0)‖_∞`.
    pub fn conservation_defect(&self, model: &EpidemicModel) -> f64 {
        (0..self.s.len())
            .map(|k| {
                let total = self.s.values()[k] + self.i.values()[k] + self.v_cum.values()[k] + self.r_cum.values()[k];
                (total - model.s0().values()[k] - model.i0().values()[k]).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipEvent {
    pub t: f64,
    /// Planned doses over the step that could not be delivered.
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinS {
    pub t: f64,
    pub node: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub halvings: usize,
    pub clips: Vec<ClipEvent>,
    pub clipped_mass: f64,
    pub min_s: MinS,
    pub max_conservation_defect: f64,
}

#[derive(Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub converged: bool,
    pub t_end: f64,
    pub snapshot_stride: usize,
    /// State at the plan horizon, when the plan is non-trivial.
    pub plan_end: Option<State>,
    pub diagnostics: Diagnostics,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("snapshots", &self.states.len())
            .field("converged", &self.converged)
            .field("t_end", &self.t_end)
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory always holds the initial state")
    }

    /// The numerical `S∞`.
    pub fn s_inf(&self) -> &AgeDensity {
        &self.final_state().s
    }

    /// Doses actually delivered, `∫₀^{t_end} ν_eff(t,·) dt`.
    pub fn delivered(&self) -> &AgeDensity {
        &self.final_state().v_cum
    }

    /// CSV with columns `t, age, S, I, Vcum, Rcum`, one row per snapshot and node.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["t", "age", "S", "I", "Vcum", "Rcum"])?;
        for st in &self.states {
            let ages = st.s.grid().nodes();
            for k in 0..ages.len() {
                let row = [st.t, ages[k], st.s.values()[k], st.i.values()[k], st.v_cum.values()[k], st.r_cum.values()[k]];
                w.serialize(row).map_err(std::io::Error::other)?;
            }
        }
        w.flush()
    }
}

/// Right-hand side of the four-compartment system on packed `[S | I | V | R]`.
struct System<'a> {
    beta: &'a Kernel,
    mu: &'a [f64],
    plan: &'a VaccinationPlan,
    /// When clipping, the delivered rate is at most `cap·max(S, 0)`.
    cap: Option<f64>,
    force: Vec<f64>,
    nu: Vec<f64>,
}

impl<'a> System<'a> {
    fn new(model: &'a EpidemicModel, plan: &'a VaccinationPlan) -> Self {
        let n = model.grid().n();
        System { beta: model.beta(), mu: model.mu().values(), plan, cap: None, force: vec![0.0; n], nu: vec![0.0; n] }
    }

    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.mu.len();
        let (s, rest) = y.split_at(n);
        let i = &rest[..n];
        self.beta.apply_into(i, &mut self.force);
        self.plan.rate_into(t, &mut self.nu);
        if let Some(cap) = self.cap {
            for (nu, s) in self.nu.iter_mut().zip(s) {
                *nu = nu.min(cap * s.max(0.0));
            }
        }
        for k in 0..n {
            let infection = s[k] * self.force[k];
            let removal = self.mu[k] * i[k];
            dy[k] = -infection - self.nu[k];
            dy[n + k] = infection - removal;
            dy[2 * n + k] = self.nu[k];
            dy[3 * n + k] = removal;
        }
    }

    fn rk4(&mut self, t: f64, y: &[f64], h: f64) -> Vec<f64> {
        let m = y.len();
        let mut k1 = vec![0.0; m];
        let mut k2 = vec![0.0; m];
        let mut k3 = vec![0.0; m];
        let mut k4 = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        self.eval(t, y, &mut k1);
        for j in 0..m {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        self.eval(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..m {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        self.eval(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..m {
            tmp[j] = y[j] + h * k3[j];
        }
        self.eval(t + h, &tmp, &mut k4);
        (0..m).map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect()
    }

    /// `∫_t^{t+h} ν` by Simpson's rule, matching the RK4 weights for a
    /// state-independent integrand.
    fn planned_mass(&mut self, t: f64, h: f64, weights: &[f64]) -> f64 {
        let mut total = 0.0;
        for (tau, c) in [(t, 1.0), (t + 0.5 * h, 4.0), (t + h, 1.0)] {
            self.plan.rate_into(tau, &mut self.nu);
            total += c * weights.iter().zip(&self.nu).map(|(w, v)| w * v).sum::<f64>();
        }
        total * h / 6.0
    }
}

fn undershoot(y: &[f64], n: usize, tol: f64) -> Option<usize> {
    y[..n].iter().position(|&s| s < -tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stepped {
    pub state: State,
    pub halvings: usize,
    pub clip: Option<ClipEvent>,
}

/// Advances `state` by `dt` with the positivity guard.
pub fn step(model: &EpidemicModel, plan: &VaccinationPlan, state: &State, dt: f64) -> Result<Stepped> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    let mut sys = System::new(model, plan);
    step_with(&mut sys, model, state, dt)
}

fn step_with(sys: &mut System<'_>, model: &EpidemicModel, state: &State, dt: f64) -> Result<Stepped> {
    let n = model.grid().n();
    let tol = model.tol_s();
    let mut y = state.pack();
    let mut t = state.t;
    let mut remaining = dt;
    let mut h = dt;
    let mut halvings = 0;
    let mut clip = None;
    while remaining > 1e-14 * dt {
        h = h.min(remaining);
        let cand = sys.rk4(t, &y, h);
        if undershoot(&cand, n, tol).is_none() {
            y = cand;
            t += h;
            remaining -= h;
            h *= 2.0;
            continue;
        }
        if halvings < MAX_HALVINGS {
            h *= 0.5;
            halvings += 1;
            continue;
        }
        // Last resort: cap ν proportionally to S over the rest of the step, so
        // that S decays instead of crossing zero.
        sys.cap = Some(1.0 / remaining);
        let cand = sys.rk4(t, &y, remaining);
        sys.cap = None;
        if let Some(node) = undershoot(&cand, n, tol) {
            return Err(Error::Integration {
                t,
                node,
                reason: format!("S = {} below -tol_S even with clipped vaccination", cand[node]),
            });
        }
        let w = model.grid().weights();
        let delivered: f64 = (0..n).map(|k| w[k] * (cand[2 * n + k] - y[2 * n + k])).sum();
        let planned = sys.planned_mass(t, remaining, w);
        clip = Some(ClipEvent { t, mass: (planned - delivered).max(0.0) });
        y = cand;
        remaining = 0.0;
    }
    if let Some(j) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Integration { t, node: j % n, reason: "non-finite state".into() });
    }
    Ok(Stepped { state: state.unpack(state.t + dt, y), halvings, clip })
}

fn ds_norm(sys: &mut System<'_>, state: &State) -> f64 {
    let n = state.s.len();
    let mut dy = vec![0.0; 4 * n];
    sys.eval(state.t, &state.pack(), &mut dy);
    dy[..n].iter().fold(0.0, |m, d| m.max(d.abs()))
}

enum Stop {
    Converged,
    At(f64),
}

fn run(model: &EpidemicModel, plan: &VaccinationPlan, config: &SimConfig, stop: Stop) -> Result<Trajectory> {
    config.validate()?;
    if !model.grid().same_as(plan.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut sys = System::new(model, plan);
    let horizon = plan.horizon();
    let t_stop = match stop {
        Stop::Converged => config.t_max,
        Stop::At(t) => t,
    };
    let mut state = State::initial(model);
    let mut states = vec![state.clone()];
    let mut diag = Diagnostics {
        steps: 0,
        halvings: 0,
        clips: Vec::new(),
        clipped_mass: 0.0,
        min_s: MinS { t: 0.0, node: 0, value: model.s0().min() },
        max_conservation_defect: 0.0,
    };
    let mut plan_end = None;
    let mut converged = false;
    let mut last_pushed = true;
    loop {
        if matches!(stop, Stop::Converged)
            && state.t >= horizon
            && state.i.integral() < config.eps_i
            && ds_norm(&mut sys, &state) < config.eps_ds
        {
            converged = true;
            break;
        }
        if state.t >= t_stop {
            break;
        }
        let in_window = state.t < horizon;
        let mut h = if in_window {
            config.window_dt.map_or(config.dt, |w| w.min(config.dt)).min(horizon - state.t)
        } else {
            config.dt
        };
        h = h.min(t_stop - state.t);
        let stepped = step_with(&mut sys, model, &state, h)?;
        state = stepped.state;
        if in_window && (horizon - state.t).abs() <= 1e-12 * horizon.max(1.0) {
            state.t = horizon;
        }
        diag.steps += 1;
        diag.halvings += stepped.halvings;
        if let Some(c) = stepped.clip {
            diag.clipped_mass += c.mass;
            diag.clips.push(c);
        }
        for (node, &s) in state.s.values().iter().enumerate() {
            if s < diag.min_s.value {
                diag.min_s = MinS { t: state.t, node, value: s };
            }
        }
        diag.max_conservation_defect = diag.max_conservation_defect.max(state.conservation_defect(model));
        if in_window && state.t >= horizon {
            plan_end = Some(state.clone());
        }
        last_pushed = diag.steps.is_multiple_of(config.snapshot_stride);
        if last_pushed {
            states.push(state.clone());
        }
    }
    if !last_pushed {
        states.push(state.clone());
    }
    Ok(Trajectory { t_end: state.t, states, converged, snapshot_stride: config.snapshot_stride, plan_end, diagnostics: diag })
}

/// Integrates until `∫I < eps_i`, the plan is exhausted and `‖∂t S‖_∞ < eps_ds`,
/// or until `t_max` (then `converged` is false).
pub fn simulate(model: &EpidemicModel, plan: &VaccinationPlan, config: &SimConfig) -> Result<Trajectory> {
    run(model, plan, config, Stop::Converged)
}

/// Integrates over `[0, t_end]` regardless of convergence.
pub fn simulate_until(model: &EpidemicModel, plan: &VaccinationPlan, config: &SimConfig, t_end: f64) -> Result<Trajectory> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::invalid(format!("t_end must be >= 0, got {t_end}")));
    }
    run(model, plan, config, Stop::At(t_end))
}

pub(crate) struct Window {
    pub min_s: MinS,
    pub clips: Vec<ClipEvent>,
}

pub(crate) fn simulate_window(model: &EpidemicModel, plan: &VaccinationPlan, config: &SimConfig, t_end: f64) -> Result<Window> {
    let mut cfg = config.clone();
    cfg.snapshot_stride = usize::MAX;
    let traj = simulate_until(model, plan, &cfg, t_end)?;
    Ok(Window { min_s: traj.diagnostics.min_s, clips: traj.diagnostics.clips })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationResidual {
    pub t: f64,
    /// `|S(t,x) − RHS(t,x)|`, `None` where `S ≤ 0` makes the formula meaningless.
    pub residual: Vec<Option<f64>>,
    pub sup: f64,
    pub not_evaluable: Vec<usize>,
}

/// Pointwise gap between the simulated `S(t,·)` and the closed integral
/// representation
///
/// ```text
/// S(t,x) = S0(x)·exp( ∫∫ β(x,y)(S(t−τ,y) − S0(y))e^{−μ(y)τ} dτ dy
///                   + ∫ β(x,y) ∫ V(t−τ,y) e^{−μ(y)τ} dτ dy
///                   − ∫ β(x,y)/μ(y)·I0(y)(1 − e^{−μ(y)t}) dy
///                   − ∫₀^t ν(τ,x)/S(τ,x) dτ )
/// ```
///
/// with every time integral evaluated by the trapezoid rule over the stored
/// snapshots. Requires a trajectory recorded with stride 1.
pub fn representation_residual(
    model: &EpidemicModel,
    plan: &VaccinationPlan,
    trajectory: &Trajectory,
    t: f64,
) -> Result<RepresentationResidual> {
    if trajectory.snapshot_stride != 1 {
        return Err(Error::invalid("representation residual needs snapshot_stride = 1"));
    }
    let states = &trajectory.states;
    let tol_t = 1e-9 * t.max(1.0);
    let last = states
        .iter()
        .position(|s| (s.t - t).abs() <= tol_t)
        .ok_or_else(|| Error::invalid(format!("no snapshot at t = {t}")))?;
    let states = &states[..=last];
    let n = model.grid().n();
    let mu = model.mu().values();
    let s0 = model.s0().values();
    let i0 = model.i0().values();

    // Memory terms, per infectious age y.
    let mut memory = vec![0.0; n];
    let mut nu_over_s = vec![0.0; n];
    let mut bad = vec![false; n];
    let mut prev: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for st in states {
        let decay: Vec<f64> = (0..n).map(|y| (-mu[y] * (t - st.t)).exp()).collect();
        let mem: Vec<f64> = (0..n).map(|y| (st.s.values()[y] - s0[y] + st.v_cum.values()[y]) * decay[y]).collect();
        let nu = plan.rate(st.t);
        let ratio: Vec<f64> = (0..n)
            .map(|x| {
                if nu[x] == 0.0 {
                    0.0
                } else if st.s.values()[x] > 0.0 {
                    nu[x] / st.s.values()[x]
                } else {
                    bad[x] = true;
                    0.0
                }
            })
            .collect();
        if let Some((tp, mp, rp)) = &prev {
            let h = st.t - tp;
            for k in 0..n {
                memory[k] += 0.5 * h * (mp[k] + mem[k]);
                nu_over_s[k] += 0.5 * h * (rp[k] + ratio[k]);
            }
        }
        prev = Some((st.t, mem, ratio));
    }
    let conv = model.beta().apply_slice(&memory);
    let seed: Vec<f64> = (0..n).map(|y| i0[y] * (-(-mu[y] * t).exp_m1()) / mu[y]).collect();
    let seed = model.beta().apply_slice(&seed);

    let s_t = states[last].s.values();
    let mut residual = Vec::with_capacity(n);
    let mut not_evaluable = Vec::new();
    let mut sup = 0.0_f64;
    for x in 0..n {
        if bad[x] || s_t[x] <= 0.0 {
            residual.push(None);
            not_evaluable.push(x);
            continue;
        }
        let rhs = s0[x] * (conv[x] - seed[x] - nu_over_s[x]).exp();
        let r = (s_t[x] - rhs).abs();
        sup = sup.max(r);
        residual.push(Some(r));
    }
    Ok(RepresentationResidual { t: states[last].t, residual, sup, not_evaluable })
}
