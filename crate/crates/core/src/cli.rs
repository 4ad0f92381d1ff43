//! Command-line front end. Every subcommand reads one scenario file and
//! writes CSV/JSON artifacts into `--out`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{AllocationSpec, ConfigError, Method, PlanSpec, Scenario};
use crate::dynamics::{simulate, Trajectory};
use crate::error::Error;
use crate::finalsize::{objective_ivp, solve_final_size, solve_final_size_separable};
use crate::grid::AgeDensity;
use crate::io::{write_atomic, write_csv, write_json};
use crate::ivp::{admissible_budget_bound, bathtub_allocate_with_ratio, optimize_projected_gradient, sweep_budget};
use crate::model::{nu_infinity, Budget, EpidemicModel, StaticAllocation, TimeProfile, VaccinationPlan};
use crate::ovp::{maximizing_sequence, mollified_plan, random_admissible_plans, upper_bound_audit};
use crate::spectral::{classify_threshold, post_epidemic_eigenvalue};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sirvax", version, about = "Age-structured SIR epidemics with vaccination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, env = "SIRVAX_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the epidemic with the configured plan.
    Simulate(Common),
    /// Principal eigenvalue and spread classification.
    Threshold(Common),
    /// Final size for the configured static allocation.
    FinalSize(Common),
    /// Optimal static allocation under the budget.
    OptimizeIvp(Common),
    /// Objective of the bathtub allocation along a range of budgets.
    SweepBudget(Common),
    /// Maximizing sequence and upper-bound audit.
    Equivalence(Common),
    /// End-to-end run producing the allocation, plan and S/I fields.
    PaperFigure(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Threshold(c)
            | Command::FinalSize(c)
            | Command::OptimizeIvp(c)
            | Command::SweepBudget(c)
            | Command::Equivalence(c)
            | Command::PaperFigure(c) => c,
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Numerical(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numerical(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(Error::Io(e))
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let common = cli.command.common().clone();
    if let Some(n) = common.threads {
        // fails only if the global pool already exists, e.g. in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli.command) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("{}: {e}", common.config.display());
            EXIT_CONFIG
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e}");
            let diag = diagnostic(&e);
            if let Err(io) = write_json(&common.out.join("error.json"), &diag) {
                eprintln!("could not write error.json: {io}");
            }
            EXIT_NUMERICAL
        }
    }
}

fn diagnostic(e: &Error) -> serde_json::Value {
    let mut v = json!({ "error": e.to_string() });
    match e {
        Error::NotConverged { t_end, partial } => {
            v["t_end"] = json!(t_end);
            v["integral_i"] = json!(partial.final_state().i.integral());
            v["diagnostics"] = json!(partial.diagnostics);
        }
        Error::SolverStall { iterations, gap } => {
            v["iterations"] = json!(iterations);
            v["gap"] = json!(gap);
        }
        Error::Integration { t, node, .. } => {
            v["t"] = json!(t);
            v["node"] = json!(node);
        }
        Error::EigenNoConvergence { iterations, last_change } => {
            v["iterations"] = json!(iterations);
            v["last_change"] = json!(last_change);
        }
        _ => {}
    }
    v
}

pub fn run(command: &Command) -> CliResult<()> {
    let common = command.common();
    let scenario = Scenario::load(&common.config)?;
    let model = scenario.model()?;
    let ctx = Ctx { scenario, model, out: common.out.clone(), seed_override: common.seed };
    match command {
        Command::Simulate(_) => ctx.simulate(),
        Command::Threshold(_) => ctx.threshold(),
        Command::FinalSize(_) => ctx.final_size(),
        Command::OptimizeIvp(_) => ctx.optimize_ivp(),
        Command::SweepBudget(_) => ctx.sweep(),
        Command::Equivalence(_) => ctx.equivalence(),
        Command::PaperFigure(_) => ctx.paper_figure(),
    }
}

struct Ctx {
    scenario: Scenario,
    model: EpidemicModel,
    out: PathBuf,
    seed_override: Option<u64>,
}

fn per_node(model: &EpidemicModel, cols: &[&[f64]]) -> Vec<Vec<f64>> {
    let nodes = model.grid().nodes();
    (0..nodes.len()).map(|i| std::iter::once(nodes[i]).chain(cols.iter().map(|c| c[i])).collect()).collect()
}

fn field_rows(traj: &Trajectory, pick: impl Fn(&crate::dynamics::State) -> &AgeDensity) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for st in &traj.states {
        let nodes = st.s.grid().nodes();
        for (x, v) in nodes.iter().zip(pick(st).values()) {
            rows.push(vec![st.t, *x, *v]);
        }
    }
    rows
}

#[derive(Serialize)]
struct Stats {
    integral: f64,
    min: f64,
    max: f64,
}

fn stats(d: &AgeDensity) -> Stats {
    Stats { integral: d.integral(), min: d.min(), max: d.max() }
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> u64 {
        self.seed_override.unwrap_or(self.scenario.config.seed)
    }

    fn require_budget(&self) -> CliResult<Budget> {
        self.scenario.budget(&self.model)?.ok_or_else(|| {
            Failure::Config(ConfigError { message: "this command needs a [budget] section".into(), line: None })
        })
    }

    fn allocation(&self) -> CliResult<StaticAllocation> {
        Ok(match &self.scenario.config.allocation {
            AllocationSpec::None => StaticAllocation::zero(&self.model),
            AllocationSpec::Fraction { value } => StaticAllocation::fraction_of_s0(&self.model, *value)
                .map_err(|e| ConfigError { message: e.to_string(), line: crate::config::locate(&self.scenario.text, "allocation", "value") })?,
            AllocationSpec::Bathtub => {
                let ratio = self.scenario.ratio(&self.model);
                bathtub_allocate_with_ratio(&self.model, &ratio, self.require_budget()?)?.allocation
            }
        })
    }

    fn plan(&self, v: &StaticAllocation) -> CliResult<VaccinationPlan> {
        let bad = |key: &str, e: Error| ConfigError { message: e.to_string(), line: crate::config::locate(&self.scenario.text, "plan", key) };
        Ok(match &self.scenario.config.plan {
            PlanSpec::None => VaccinationPlan::none(self.model.grid().clone()),
            PlanSpec::Mollified { epsilon } => mollified_plan(v.density(), *epsilon).map_err(|e| bad("epsilon", e))?,
            PlanSpec::Bump { start, width } => VaccinationPlan::separable(
                TimeProfile::bump(*start, *width).map_err(|e| bad("width", e))?,
                v.density().clone(),
            )
            .map_err(|e| bad("kind", e))?,
        })
    }

    fn simulate(&self) -> CliResult<()> {
        let v = self.allocation()?;
        let plan = self.plan(&v)?;
        let mut cfg = self.scenario.sim_config(&self.model)?;
        if let PlanSpec::Mollified { epsilon } = self.scenario.config.plan {
            cfg.window_dt.get_or_insert(epsilon / 50.0);
        }
        let traj = simulate(&self.model, &plan, &cfg)?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        write_atomic(&self.path("trajectory.csv"), &buf)?;
        let s_inf = traj.s_inf();
        write_csv(&self.path("s_inf.csv"), &["age", "S0", "S_inf"], per_node(&self.model, &[self.model.s0().values(), s_inf.values()]))?;
        let delivered = traj.delivered();
        let summary = json!({
            "converged": traj.converged,
            "t_end": traj.t_end,
            "n": s_inf.integral() + delivered.integral(),
            "s_inf": stats(s_inf),
            "nu_inf_planned": nu_infinity(&plan).integral(),
            "nu_inf_delivered": delivered.integral(),
            "diagnostics": traj.diagnostics,
        });
        write_json(&self.path("summary.json"), &summary)?;
        if !traj.converged {
            return Err(Failure::Numerical(Error::NotConverged { t_end: traj.t_end, partial: Box::new(traj) }));
        }
        Ok(())
    }

    fn threshold(&self) -> CliResult<()> {
        let t = classify_threshold(&self.model)?;
        write_json(
            &self.path("threshold.json"),
            &json!({
                "lambda1": t.lambda1(),
                "rho": t.eigen.rho,
                "classification": t.classification,
                "iterations": t.eigen.iterations,
                "residual": t.eigen.residual,
            }),
        )?;
        write_csv(&self.path("eigenfunction.csv"), &["age", "phi1"], per_node(&self.model, &[t.eigen.phi1.values()]))?;
        Ok(())
    }

    fn final_size(&self) -> CliResult<()> {
        let v = self.allocation()?;
        let sol = solve_final_size(&self.model, &v)?;
        let post = post_epidemic_eigenvalue(&self.model, &sol.s_inf)?;
        let mut report = json!({
            "n_star": sol.s_inf.integral() + v.mass(),
            "iterations": sol.iterations,
            "residual": sol.residual,
            "s_inf": stats(&sol.s_inf),
            "post_epidemic_lambda": post.lambda1,
        });
        if self.model.is_separable() {
            let (_, summary) = solve_final_size_separable(&self.model, &v)?;
            report["scalar"] = json!(summary);
        }
        write_csv(
            &self.path("s_inf.csv"),
            &["age", "S0", "v", "S_inf"],
            per_node(&self.model, &[self.model.s0().values(), v.values(), sol.s_inf.values()]),
        )?;
        write_json(&self.path("final_size.json"), &report)?;
        Ok(())
    }

    fn optimize_ivp(&self) -> CliResult<()> {
        let budget = self.require_budget()?;
        let separable = self.model.is_separable();
        let method = self.scenario.config.optimizer.method;
        let (run_bath, run_pg) = match method {
            Method::Auto => (separable, !separable),
            Method::Bathtub => (true, false),
            Method::ProjectedGradient => (false, true),
            Method::Both => (true, true),
        };
        let ratio = self.scenario.ratio(&self.model);
        let mut report = json!({ "budget": budget.k(), "separable": separable });
        let mut cols: Vec<Vec<f64>> = vec![ratio.values().to_vec(), self.model.s0().values().to_vec()];
        let mut header = vec!["age", "ratio", "S0"];
        if run_bath {
            let mut b = bathtub_allocate_with_ratio(&self.model, &ratio, budget)?;
            if !separable {
                b.warnings.push("kernel is not separable; the fill order uses the age-averaged ratio and is not certified optimal".into());
            }
            let obj = objective_ivp(&self.model, &b.allocation)?;
            report["bathtub"] = json!({ "objective": obj, "allocation": b });
            cols.push(b.allocation.values().to_vec());
            header.push("v_bathtub");
        }
        if run_pg {
            let pg = optimize_projected_gradient(&self.model, budget, &StaticAllocation::zero(&self.model), self.scenario.optimizer_options())?;
            cols.push(pg.allocation.values().to_vec());
            report["projected_gradient"] = json!(pg);
            header.push("v_projected_gradient");
        }
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        write_csv(&self.path("allocation.csv"), &header, per_node(&self.model, &refs))?;
        write_json(&self.path("optimizer.json"), &report)?;
        Ok(())
    }

    fn sweep(&self) -> CliResult<()> {
        let spec = &self.scenario.config.sweep;
        let top = match spec.max {
            Some(m) => m,
            None => self.require_budget()?.k(),
        };
        let count = spec.count.max(2);
        let budgets: Vec<f64> = (0..count).map(|j| top * j as f64 / (count - 1) as f64).collect();
        let curve = sweep_budget(&self.model, &budgets)?;
        write_csv(&self.path("sweep.csv"), &["m", "n_star"], curve.iter().map(|&(m, n)| vec![m, n]))?;
        Ok(())
    }

    fn equivalence(&self) -> CliResult<()> {
        let v = self.allocation()?;
        let cfg = self.scenario.sim_config(&self.model)?;
        let spec = &self.scenario.config.equivalence;
        let mut report = maximizing_sequence(&self.model, &v, &spec.epsilons, &cfg)?;
        let mut plans = vec![("none".to_string(), VaccinationPlan::none(self.model.grid().clone()))];
        if spec.audit_plans > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
            plans.extend(random_admissible_plans(&self.model, spec.audit_plans, &mut rng, &cfg)?);
        }
        report.upper_bound_checks = upper_bound_audit(&self.model, &plans, &cfg)?;
        write_csv(&self.path("gaps.csv"), &["epsilon", "N", "gap"], report.gap_sequence().into_iter().map(|(e, n, g)| vec![e, n, g]))?;
        write_json(&self.path("equivalence.json"), &report)?;
        if let Some(bad) = report.upper_bound_checks.iter().find(|c| !c.passed) {
            eprintln!("upper-bound audit failed for {}: slack {:e}", bad.plan_id, bad.slack);
        }
        Ok(())
    }

    fn paper_figure(&self) -> CliResult<()> {
        let fig = paper_figure(&self.scenario, &self.model)?;
        let nodes = self.model.grid().nodes();
        write_csv(
            &self.path("allocation.csv"),
            &["age", "ratio", "S0", "v"],
            per_node(&self.model, &[fig.ratio.values(), self.model.s0().values(), fig.allocation.values()]),
        )?;
        let steps = 50;
        let mut heat = Vec::new();
        for j in 0..=steps {
            let t = fig.epsilon * j as f64 / steps as f64;
            for (x, nu) in nodes.iter().zip(fig.plan.rate(t)) {
                heat.push(vec![t, *x, nu]);
            }
        }
        write_csv(&self.path("plan_heat.csv"), &["t", "age", "nu"], heat)?;
        write_csv(&self.path("s_field.csv"), &["t", "age", "S"], field_rows(&fig.trajectory, |s| &s.s))?;
        write_csv(&self.path("i_field.csv"), &["t", "age", "I"], field_rows(&fig.trajectory, |s| &s.i))?;
        write_json(&self.path("figure.json"), &fig.summary)?;
        Ok(())
    }
}

/// Result of the end-to-end figure scenario.
pub struct Figure {
    pub ratio: AgeDensity,
    pub allocation: StaticAllocation,
    pub plan: VaccinationPlan,
    pub epsilon: f64,
    pub trajectory: Trajectory,
    pub summary: FigureSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureSummary {
    pub budget: f64,
    pub budget_bound: f64,
    pub lambda1: f64,
    pub classification: crate::spectral::Classification,
    /// Nodes with `v = S0`, ascending.
    pub band: Vec<usize>,
    pub cut_node: Option<usize>,
    pub support_is_top_level_set: bool,
    pub max_s_inf_on_band: f64,
    pub min_s_inf_off_band: f64,
    pub n_plan: f64,
    pub n_star: f64,
    pub relative_gap: f64,
    pub converged: bool,
    pub clipped_mass: f64,
    pub warnings: Vec<String>,
}

/// Bathtub allocation at the configured budget, delivered by the mollified
/// plan `ν_ε` (default `ε = 0.02`) without the strict `v < S0` cap so that the
/// band empties completely.
pub fn paper_figure(scenario: &Scenario, model: &EpidemicModel) -> CliResult<Figure> {
    let budget = match scenario.budget(model)? {
        Some(b) => b,
        None => {
            let bound = admissible_budget_bound(model, &scenario.ratio(model))?;
            Budget::new(0.5 * bound.min(model.s0().integral()))?
        }
    };
    let ratio = scenario.ratio(model);
    let bath = bathtub_allocate_with_ratio(model, &ratio, budget)?;
    let epsilon = match scenario.config.plan {
        PlanSpec::Mollified { epsilon } => epsilon,
        _ => 0.02,
    };
    let plan = mollified_plan(bath.allocation.density(), epsilon)?;
    let mut cfg = scenario.sim_config(model)?;
    cfg.window_dt.get_or_insert(epsilon / 50.0);
    let trajectory = simulate(model, &plan, &cfg)?;
    let threshold = classify_threshold(model)?;
    let n_star = objective_ivp(model, &bath.allocation)?;
    let s_inf = trajectory.s_inf();
    let n_plan = s_inf.integral() + trajectory.delivered().integral();

    let band = bath.full_nodes();
    let mut support: Vec<usize> = bath.allocation.values().iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect();
    support.sort_unstable();
    let mut top: Vec<usize> = bath.order[..support.len()].to_vec();
    top.sort_unstable();
    let on_band = |i: &usize| band.binary_search(i).is_ok();
    let s = s_inf.values();
    let max_on = (0..s.len()).filter(on_band).map(|i| s[i]).fold(0.0, f64::max);
    let min_off = (0..s.len()).filter(|i| !on_band(i)).map(|i| s[i]).fold(f64::INFINITY, f64::min);

    let summary = FigureSummary {
        budget: budget.k(),
        budget_bound: admissible_budget_bound(model, &ratio)?,
        lambda1: threshold.lambda1(),
        classification: threshold.classification,
        band,
        cut_node: bath.cut_node,
        support_is_top_level_set: support == top,
        max_s_inf_on_band: max_on,
        min_s_inf_off_band: min_off,
        n_plan,
        n_star,
        relative_gap: (n_plan - n_star).abs() / n_star,
        converged: trajectory.converged,
        clipped_mass: trajectory.diagnostics.clipped_mass,
        warnings: bath.warnings.clone(),
    };
    Ok(Figure { ratio, allocation: bath.allocation, plan, epsilon, trajectory, summary })
}
