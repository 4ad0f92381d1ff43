//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL` line;
//! the test fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sirvax::config::Scenario;
use sirvax::dynamics::{representation_residual, simulate_until};
use sirvax::finalsize::scalar_summary;
use sirvax::ivp::{optimize_projected_gradient, random_allocation_with_mass, OptimizerOptions};
use sirvax::ovp::random_admissible_plans;
use sirvax::*;

const R0: f64 = 2.0;
const I0: f64 = 1e-4;

/// Conservation records: (label, max defect, simulated time, ‖S0 + I0‖∞).
static CONSERVATION: Mutex<Vec<(String, f64, f64, f64)>> = Mutex::new(Vec::new());
/// Final states of converged runs, checked for post-epidemic stability.
static FINAL_STATES: Mutex<Vec<(String, EpidemicModel, AgeDensity)>> = Mutex::new(Vec::new());

fn record(label: &str, model: &EpidemicModel, defect: f64, t_end: f64) {
    let norm = model.s0().zip_map(model.i0(), |a, b| a + b).unwrap().sup_norm();
    CONSERVATION.lock().unwrap().push((label.to_string(), defect, t_end, norm));
}

fn record_trajectory(label: &str, model: &EpidemicModel, traj: &Trajectory) {
    record(label, model, traj.diagnostics.max_conservation_defect, traj.t_end);
    if traj.converged {
        FINAL_STATES.lock().unwrap().push((label.to_string(), model.clone(), traj.s_inf().clone()));
    }
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn homogeneous(n: usize, beta: f64) -> EpidemicModel {
    EpidemicModel::homogeneous(1.0, n, beta, 1.0, 1.0, I0).unwrap()
}

/// Root of `s = exp(R0(s − 1 − i0))` in (0, 1/R0) by plain bisection.
fn scalar_final_size(r0: f64, i0: f64) -> f64 {
    let g = |s: f64| s - (r0 * (s - 1.0 - i0)).exp();
    let (mut lo, mut hi) = (0.0_f64, 1.0 / r0);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_threshold() -> Outcome {
    let m = homogeneous(200, 2.0);
    let k = sirvax::spectral::stability_kernel(&m, m.s0()).map_err(|e| e.to_string())?;
    let a = principal_eigenvalue(&k).map_err(|e| e.to_string())?;
    let t_plus = classify_threshold(&homogeneous(200, 2.0)).map_err(|e| e.to_string())?;
    let t_minus = classify_threshold(&homogeneous(200, 0.5)).map_err(|e| e.to_string())?;
    let (l2, l05) = (t_plus.lambda1(), t_minus.lambda1());
    check(
        (l2 + 1.0).abs() <= 1e-8
            && (l05 - 0.5).abs() <= 1e-8
            && (a.lambda1 - l2).abs() <= 1e-12
            && t_plus.classification == Classification::Spreads
            && t_minus.classification == Classification::NoSpread,
        format!("lambda1(beta=2) = {l2:.12}, lambda1(beta=0.5) = {l05:.12}"),
    )
}

fn c2_final_size() -> Outcome {
    let s_star = scalar_final_size(R0, I0);
    let m = homogeneous(200, R0);
    let zero = StaticAllocation::zero(&m);
    let general = solve_final_size(&m, &zero).map_err(|e| e.to_string())?;
    let (sep, _) = solve_final_size_separable(&m, &zero).map_err(|e| e.to_string())?;
    let mut cfg = SimConfig::for_model(&m);
    cfg.t_max = 400.0;
    let traj = simulate(&m, &VaccinationPlan::none(m.grid().clone()), &cfg).map_err(|e| e.to_string())?;
    record_trajectory("c2 homogeneous dt=1e-3", &m, &traj);
    let b = general.s_inf.values().iter().map(|s| (s - s_star).abs()).fold(0.0, f64::max);
    let c = traj.s_inf().values().iter().map(|s| (s - s_star).abs() / s_star).fold(0.0, f64::max);
    let d = general.s_inf.max_abs_diff(&sep.s_inf).map_err(|e| e.to_string())?;
    check(
        (s_star - 0.2031).abs() < 1e-3 && b <= 1e-6 && traj.converged && c <= 1e-3 && d <= 1e-8,
        format!("s* = {s_star:.8}; solver {b:.1e}; simulation rel {c:.1e} (converged {}); separable {d:.1e}", traj.converged),
    )
}

fn c3_representation() -> Outcome {
    let m = homogeneous(200, R0);
    let mut cfg = SimConfig::for_model(&m);
    cfg.snapshot_stride = 1;
    let plan = VaccinationPlan::none(m.grid().clone());
    let traj = simulate_until(&m, &plan, &cfg, 5.0).map_err(|e| e.to_string())?;
    record("c3 representation run", &m, traj.diagnostics.max_conservation_defect, traj.t_end);
    let res = representation_residual(&m, &plan, &traj, 5.0).map_err(|e| e.to_string())?;
    let tol = 1e-4 * m.s0().sup_norm();
    check(
        res.sup <= tol && res.not_evaluable.is_empty(),
        format!("sup residual at t=5: {:.2e} (tol {tol:.0e})", res.sup),
    )
}

fn c5_upper_bound() -> Outcome {
    let mut lines = Vec::new();
    let mut violations = 0;
    let mut total = 0;
    let sep = scenario("separable.toml");
    let paper_text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper.toml")).unwrap();
    // supercritical member of the Gaussian-kernel family on a coarser grid
    let gauss_text = paper_text.replace("b = 0.05", "b = 2.0").replace("n = 101", "n = 41");
    let gauss = Scenario::from_str(&gauss_text, PathBuf::new()).map_err(|e| e.to_string())?;
    let hom = homogeneous(41, R0);
    let mut hom_cfg = SimConfig::for_model(&hom);
    hom_cfg.dt = 0.01;
    hom_cfg.t_max = 300.0;
    let cases = vec![
        ("homogeneous", hom.clone(), hom_cfg),
        ("separable", sep.model().unwrap(), sep.sim_config(&sep.model().unwrap()).unwrap()),
        ("gaussian", gauss.model().unwrap(), gauss.sim_config(&gauss.model().unwrap()).unwrap()),
    ];
    for (seed, (name, model, cfg)) in cases.into_iter().enumerate() {
        let free = simulate(&model, &VaccinationPlan::none(model.grid().clone()), &cfg).map_err(|e| format!("{name}: {e}"))?;
        record_trajectory(&format!("c5 {name} unvaccinated"), &model, &free);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed as u64);
        let plans = random_admissible_plans(&model, 50, &mut rng, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let checks = upper_bound_audit(&model, &plans, &cfg).map_err(|e| format!("{name}: {e}"))?;
        for c in &checks {
            record(&format!("c5 {name} {}", c.plan_id), &model, c.max_conservation_defect, c.t_end);
        }
        let bad = checks.iter().filter(|c| !c.passed).count();
        let min_slack = checks.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
        let excess = checks.iter().map(|c| c.max_pointwise_excess).fold(f64::NEG_INFINITY, f64::max);
        violations += bad;
        total += checks.len();
        lines.push(format!("{name}: min slack {min_slack:.2e}, max excess {excess:.2e}"));
    }
    check(violations == 0 && total == 150, format!("{violations} violations in {total} plans; {}", lines.join("; ")))
}

fn c6_maximizing_sequence() -> Outcome {
    let m = homogeneous(200, R0);
    let v = StaticAllocation::fraction_of_s0(&m, 0.3).unwrap();
    let cfg = SimConfig::for_model(&m);
    let eps = [0.5, 0.2, 0.1, 0.05, 0.02];
    let rep = maximizing_sequence(&m, &v, &eps, &cfg).map_err(|e| e.to_string())?;
    for r in &rep.runs {
        if let (Some(d), Some(t)) = (r.max_conservation_defect, r.t_end) {
            record(&format!("c6 eps={}", r.epsilon), &m, d, t);
        }
    }
    let gaps: Vec<f64> = rep.runs.iter().filter_map(|r| r.gap).collect();
    let decreasing = gaps.len() == eps.len() && gaps.windows(2).all(|w| w[1] < w[0]);
    let final_rel = gaps.last().copied().unwrap_or(f64::INFINITY) / rep.n_star;
    let fit = rep.deviation_fit;
    let fit_ok = fit.is_some_and(|f| f.slope.is_finite() && f.r_squared > 0.99);
    check(
        decreasing && final_rel < 0.01 && fit_ok,
        format!(
            "gaps {:?}; final relative gap {final_rel:.2e}; deviation fit {:?}",
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            fit.map(|f| (format!("slope {:.3e}", f.slope), format!("R2 {:.5}", f.r_squared)))
        ),
    )
}

fn c7_bathtub() -> Outcome {
    let sc = scenario("separable.toml");
    let m = sc.model().unwrap();
    let budget = sc.budget(&m).unwrap().unwrap();
    let bound = sirvax::ivp::admissible_budget_bound(&m, &m.separable_ratio().unwrap()).unwrap();
    let k = budget.k();
    let bath = bathtub_allocate(&m, budget).map_err(|e| e.to_string())?;
    let n_bath = objective_ivp(&m, &bath.allocation).map_err(|e| e.to_string())?;
    let s_bath = solve_final_size(&m, &bath.allocation).map_err(|e| e.to_string())?.s_inf;
    FINAL_STATES.lock().unwrap().push(("c7 bathtub final size".into(), m.clone(), s_bath));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let v = random_allocation_with_mass(&m, k, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.min(n_bath - objective_ivp(&m, &v).map_err(|e| e.to_string())?);
    }
    let pg = optimize_projected_gradient(&m, budget, &StaticAllocation::zero(&m), OptimizerOptions::default())
        .map_err(|e| e.to_string())?;
    let pg_gap = (pg.objective - n_bath).abs();
    let exact = (bath.budget_used - k).abs();
    check(
        m.grid().n() == 16 && (k - 0.5 * bound.min(m.s0().integral())).abs() < 1e-15 && worst >= -1e-8 && pg_gap <= 1e-4 && exact <= 1e-9 * k,
        format!("K = {k:.6} (bound {bound:.6}); min N*(v_K) - N*(v) = {worst:.3e}; projected gradient gap {pg_gap:.2e}; |∫v_K - K| = {exact:.1e}"),
    )
}

fn c8_monotone_sweep() -> Outcome {
    let sc = scenario("separable.toml");
    let m = sc.model().unwrap();
    let k = sc.budget(&m).unwrap().unwrap().k();
    let ms: Vec<f64> = (0..20).map(|i| k * i as f64 / 19.0).collect();
    let curve = sweep_budget(&m, &ms).map_err(|e| e.to_string())?;
    let worst = curve.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::INFINITY, f64::min);
    check(curve.len() == 20 && worst >= -1e-9, format!("smallest increment {worst:.3e} over {} budgets", curve.len()))
}

fn c9_sigma_monotone() -> Outcome {
    let sc = scenario("separable.toml");
    let m = sc.model().unwrap();
    let ratio = m.separable_ratio().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let total = m.s0().integral();
    let mut pairs = 0;
    let mut draws = 0;
    let mut worst = f64::INFINITY;
    let mut worst_consistency = 0.0_f64;
    while pairs < 100 {
        draws += 1;
        if draws > 10_000 {
            return Err(format!("only {pairs} pairs with sigma0 > 1"));
        }
        let a = random_allocation_with_mass(&m, rand::Rng::gen_range(&mut rng, 0.0..0.6) * total, &mut rng).unwrap();
        let b = random_allocation_with_mass(&m, rand::Rng::gen_range(&mut rng, 0.0..0.6) * total, &mut rng).unwrap();
        let (sa, sb) = (scalar_summary(&m, &a).unwrap(), scalar_summary(&m, &b).unwrap());
        if sa.sigma0.min(sb.sigma0) <= 1.0 {
            continue;
        }
        let ((s1, v1), (s2, _)) = if sa.sigma0 <= sb.sigma0 { ((sa, &a), (sb, &b)) } else { ((sb, &b), (sa, &a)) };
        worst = worst.min(s1.sigma_inf - s2.sigma_inf);
        // the general solver agrees with the scalar reduction
        let s_inf = solve_final_size(&m, v1).unwrap().s_inf;
        let sigma_general = ratio.dot(&s_inf).unwrap();
        worst_consistency = worst_consistency.max((sigma_general - s1.sigma_inf).abs());
        pairs += 1;
    }
    check(
        worst >= -1e-10 && worst_consistency < 1e-9,
        format!("100 pairs ({draws} draws); min sigma_inf(v1) - sigma_inf(v2) = {worst:.3e}; general vs scalar {worst_consistency:.1e}"),
    )
}

fn c10_post_epidemic() -> Outcome {
    let s_star = scalar_final_size(R0, I0);
    let m = homogeneous(200, R0);
    let s_inf = solve_final_size(&m, &StaticAllocation::zero(&m)).map_err(|e| e.to_string())?.s_inf;
    let lam = post_epidemic_eigenvalue(&m, &s_inf).map_err(|e| e.to_string())?.lambda1;
    let closed = 1.0 - R0 * s_star;
    let states = FINAL_STATES.lock().unwrap();
    let mut min_lambda = f64::INFINITY;
    let mut min_label = String::new();
    for (label, model, s) in states.iter() {
        let l = post_epidemic_eigenvalue(model, s).map_err(|e| format!("{label}: {e}"))?.lambda1;
        if l < min_lambda {
            min_lambda = l;
            min_label = label.clone();
        }
    }
    check(
        (lam - closed).abs() <= 1e-6 && min_lambda > 1e-10 && !states.is_empty(),
        format!(
            "homogeneous {lam:.9} vs 1 - 2s* = {closed:.9}; min over {} converged runs {min_lambda:.3e} ({min_label})",
            states.len()
        ),
    )
}

fn c11_paper_figure() -> Outcome {
    let sc = scenario("paper.toml");
    let m = sc.model().unwrap();
    let fig = sirvax::cli::paper_figure(&sc, &m).map_err(|e| format!("{e:?}"))?;
    record_trajectory("c11 paper figure", &m, &fig.trajectory);
    let s = &fig.summary;
    // independent top-level-set check on the ratio used by the fill
    let r = fig.ratio.values();
    let v = fig.allocation.values();
    let s0 = m.s0().values();
    let full: Vec<usize> = (0..r.len()).filter(|&x| (v[x] - s0[x]).abs() <= 1e-15 * s0[x].max(1.0)).collect();
    let empty: Vec<usize> = (0..r.len()).filter(|&x| v[x] == 0.0).collect();
    let min_full = full.iter().map(|&x| r[x]).fold(f64::INFINITY, f64::min);
    let max_empty = empty.iter().map(|&x| r[x]).fold(f64::NEG_INFINITY, f64::max);
    let partial = r.len() - full.len() - empty.len();
    let level_set = !full.is_empty() && min_full >= max_empty && partial <= 1 && full == s.band;
    let s_inf = fig.trajectory.s_inf().values();
    let on_band = full.iter().map(|&x| s_inf[x]).fold(0.0, f64::max);
    let off_band = (0..r.len()).filter(|x| !full.contains(x)).map(|x| s_inf[x]).fold(f64::INFINITY, f64::min);
    let gap = (s.n_plan - s.n_star).abs() / s.n_star;
    check(
        level_set && s.support_is_top_level_set && fig.trajectory.converged && on_band <= 1e-8 && off_band > 0.0 && gap < 0.01,
        format!(
            "band nodes {}..={} ({} nodes, K = {:.4}); max S_inf on band {on_band:.2e}; min off band {off_band:.3e}; relative N gap {gap:.2e}",
            full.first().unwrap_or(&0),
            full.last().unwrap_or(&0),
            full.len(),
            s.budget
        ),
    )
}

fn c4_conservation() -> Outcome {
    let recs = CONSERVATION.lock().unwrap();
    let mut worst = 0.0_f64;
    let mut worst_label = String::new();
    for (label, defect, t, norm) in recs.iter() {
        let rate = defect / (norm * t.max(f64::MIN_POSITIVE));
        if rate > worst {
            worst = rate;
            worst_label = label.clone();
        }
    }
    check(
        recs.len() > 150 && worst <= 1e-6,
        format!("{} runs; worst defect per unit time {worst:.2e} relative ({worst_label})", recs.len()),
    )
}

fn run(f: fn() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

#[test]
fn acceptance_criteria() {
    let first: Vec<(usize, fn() -> Outcome)> = vec![
        (1, c1_threshold),
        (2, c2_final_size),
        (3, c3_representation),
        (5, c5_upper_bound),
        (6, c6_maximizing_sequence),
        (7, c7_bathtub),
        (8, c8_monotone_sweep),
        (9, c9_sigma_monotone),
        (11, c11_paper_figure),
    ];
    let mut results: Vec<(usize, Outcome)> = std::thread::scope(|scope| {
        let handles: Vec<_> = first.into_iter().map(|(id, f)| (id, scope.spawn(move || run(f)))).collect();
        handles.into_iter().map(|(id, h)| (id, h.join().unwrap())).collect()
    });
    // these two read what the others recorded
    results.push((4, run(c4_conservation)));
    results.push((10, run(c10_post_epidemic)));
    results.sort_by_key(|(id, _)| *id);

    let mut failed = Vec::new();
    for (id, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2}: PASS  {detail}"),
            Err(detail) => {
                println!("criterion {id:>2}: FAIL  {detail}");
                failed.push(*id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
