//! Scenario files (TOML).
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! a_max = 1.0
//! n = 101
//!
//! [model.beta]
//! kind = "gaussian"
//! b = 0.05
//! sigma_beta = 0.05
//!
//! [model.mu]
//! kind = "affine"
//! m_mu = 0.4
//! q_mu = 0.1
//!
//! [model.s0]
//! kind = "gaussian"
//! xbar = 0.3
//! sigma = 0.5
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SimConfig;
use crate::grid::{AgeDensity, AgeGrid, Kernel};
use crate::ivp::{admissible_budget_bound, OptimizerOptions};
use crate::model::{Budget, EpidemicModel};
use crate::ovp::DEFAULT_EPSILONS;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub allocation: AllocationSpec,
    #[serde(default)]
    pub plan: PlanSpec,
    #[serde(default)]
    pub equivalence: EquivalenceSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub beta: BetaSpec,
    pub mu: MuSpec,
    pub s0: S0Spec,
    #[serde(default)]
    pub i0: I0Spec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaSpec {
    /// `b·exp(−(x−y)²/σβ)`.
    Gaussian { b: f64, sigma_beta: f64 },
    Constant { value: f64 },
    /// `β(x,y) = values[y]`, one value per node.
    Separable { values: Vec<f64> },
    /// Headerless `n×n` CSV, rows indexed by `x`. Relative paths resolve
    /// against the scenario file.
    Matrix { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MuSpec {
    /// `m_mu·x + q_mu`.
    Affine { m_mu: f64, q_mu: f64 },
    Constant { value: f64 },
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum S0Spec {
    /// `mass` times the normal density with mean `xbar` and standard deviation `sigma`.
    Gaussian {
        xbar: f64,
        sigma: f64,
        #[serde(default = "one")]
        mass: f64,
    },
    Constant { value: f64 },
    Tabulated { values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum I0Spec {
    Constant { value: f64 },
    Tabulated { values: Vec<f64> },
}

impl Default for I0Spec {
    fn default() -> Self {
        I0Spec::Constant { value: 1e-4 }
    }
}

/// Exactly one of `k` or `fraction_of_bound` (a fraction of
/// `min(μ/β)·∫(β/μ)S0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_of_bound: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_ds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Bathtub for separable kernels, projected gradient otherwise.
    #[default]
    Auto,
    Bathtub,
    ProjectedGradient,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_tol_kkt")]
    pub tol_kkt: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub method: Method,
}

fn default_tol_kkt() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    500
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec { tol_kkt: default_tol_kkt(), max_iter: default_max_iter(), method: Method::Auto }
    }
}

/// Static allocation used by `simulate`, `final-size` and `equivalence`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AllocationSpec {
    #[default]
    None,
    /// Bathtub allocation at the configured budget.
    Bathtub,
    /// `value·S0`.
    Fraction { value: f64 },
}

/// Time profile applied to the allocation when simulating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlanSpec {
    #[default]
    None,
    Mollified { epsilon: f64 },
    Bump { start: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSpec {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub audit_plans: usize,
}

fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}

impl Default for EquivalenceSpec {
    fn default() -> Self {
        EquivalenceSpec { epsilons: default_epsilons(), audit_plans: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_sweep_count")]
    pub count: usize,
    /// Largest budget; defaults to the configured budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

fn default_sweep_count() -> usize {
    20
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { count: default_sweep_count(), max: None }
    }
}

/// 1-based line of `key = ...`, preferring occurrences under `[section]`.
/// An empty key finds the first header starting with `section`.
pub fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if key.is_empty() && current.starts_with(section) {
                return Some(i + 1);
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if k.trim() == key {
            if current == section {
                return Some(i + 1);
            }
            fallback.get_or_insert(i + 1);
        }
    }
    fallback
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A parsed scenario together with its source, for line-anchored messages.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e: toml::de::Error| ConfigError {
            message: e.message().to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
        })
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError { message: e.to_string(), line: None })
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { message: format!("cannot read {}: {e}", path.display()), line: None })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self, ConfigError> {
        let config = ScenarioConfig::from_toml_str(text)?;
        Ok(Scenario { config, text: text.to_string(), base_dir })
    }

    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { message: message.into(), line: locate(&self.text, section, key) }
    }

    pub fn grid(&self) -> Result<std::sync::Arc<AgeGrid>, ConfigError> {
        let g = &self.config.grid;
        AgeGrid::uniform(g.a_max, g.n).map_err(|e| self.err("grid", "n", e.to_string()))
    }

    fn nodal(&self, section: &str, values: &[f64], grid: &std::sync::Arc<AgeGrid>) -> Result<AgeDensity, ConfigError> {
        AgeDensity::new(grid.clone(), values.to_vec()).map_err(|e| self.err(section, "values", e.to_string()))
    }

    pub fn model(&self) -> Result<EpidemicModel, ConfigError> {
        let grid = self.grid()?;
        let spec = &self.config.model;
        let beta = match &spec.beta {
            BetaSpec::Gaussian { b, sigma_beta } => {
                if !(*sigma_beta > 0.0) {
                    return Err(self.err("model.beta", "sigma_beta", "sigma_beta must be > 0"));
                }
                Kernel::from_fn(grid.clone(), |x, y| b * (-(x - y).powi(2) / sigma_beta).exp())
            }
            BetaSpec::Constant { value } => Kernel::constant(grid.clone(), *value),
            BetaSpec::Separable { values } => Kernel::separable(&self.nodal("model.beta", values, &grid)?),
            BetaSpec::Matrix { path } => {
                let full = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
                let rows = crate::io::read_matrix_csv(&full).map_err(|e| self.err("model.beta", "path", e.to_string()))?;
                if rows.len() != grid.n() || rows.iter().any(|r| r.len() != grid.n()) {
                    return Err(self.err("model.beta", "path", format!("{} must hold a {n}x{n} matrix", full.display(), n = grid.n())));
                }
                Kernel::new(grid.clone(), rows.concat())
            }
        }
        .map_err(|e| self.err("model.beta", "kind", e.to_string()))?;
        let mu = match &spec.mu {
            MuSpec::Affine { m_mu, q_mu } => AgeDensity::from_fn(grid.clone(), |x| m_mu * x + q_mu),
            MuSpec::Constant { value } => AgeDensity::constant(grid.clone(), *value),
            MuSpec::Tabulated { values } => Ok(self.nodal("model.mu", values, &grid)?),
        }
        .map_err(|e| self.err("model.mu", "kind", e.to_string()))?;
        let s0 = match &spec.s0 {
            S0Spec::Gaussian { xbar, sigma, mass } => {
                if !(*sigma > 0.0) {
                    return Err(self.err("model.s0", "sigma", "sigma must be > 0"));
                }
                let c = mass / (sigma * (2.0 * PI).sqrt());
                AgeDensity::from_fn(grid.clone(), |x| c * (-(x - xbar).powi(2) / (2.0 * sigma * sigma)).exp())
            }
            S0Spec::Constant { value } => AgeDensity::constant(grid.clone(), *value),
            S0Spec::Tabulated { values } => Ok(self.nodal("model.s0", values, &grid)?),
        }
        .map_err(|e| self.err("model.s0", "kind", e.to_string()))?;
        let i0 = match &spec.i0 {
            I0Spec::Constant { value } => AgeDensity::constant(grid.clone(), *value),
            I0Spec::Tabulated { values } => Ok(self.nodal("model.i0", values, &grid)?),
        }
        .map_err(|e| self.err("model.i0", "kind", e.to_string()))?;
        EpidemicModel::new_relaxed(beta, mu, s0, i0).map_err(|e| self.err("model", "", e.to_string()))
    }

    /// Ratio used for the bathtub fill: `β/μ` when separable, otherwise the
    /// age-averaged column ratio.
    pub fn ratio(&self, model: &EpidemicModel) -> AgeDensity {
        model.separable_ratio().unwrap_or_else(|_| model.column_mean_ratio())
    }

    pub fn budget(&self, model: &EpidemicModel) -> Result<Option<Budget>, ConfigError> {
        let Some(spec) = &self.config.budget else { return Ok(None) };
        let k = match (spec.k, spec.fraction_of_bound) {
            (Some(k), None) => k,
            (None, Some(f)) => {
                let bound = admissible_budget_bound(model, &self.ratio(model)).map_err(|e| self.err("budget", "fraction_of_bound", e.to_string()))?;
                f * bound.min(model.s0().integral())
            }
            _ => return Err(self.err("budget", "", "set exactly one of budget.k and budget.fraction_of_bound")),
        };
        Budget::new(k).map(Some).map_err(|e| self.err("budget", "k", e.to_string()))
    }

    pub fn sim_config(&self, model: &EpidemicModel) -> Result<SimConfig, ConfigError> {
        let s = &self.config.sim;
        let mut c = SimConfig::for_model(model);
        if let Some(v) = s.dt {
            c.dt = v;
        }
        if let Some(v) = s.t_max {
            c.t_max = v;
        }
        if let Some(v) = s.eps_i {
            c.eps_i = v;
        }
        if let Some(v) = s.eps_ds {
            c.eps_ds = v;
        }
        if let Some(v) = s.snapshot_stride {
            c.snapshot_stride = v;
        }
        c.window_dt = s.window_dt;
        c.validate().map_err(|e| self.err("sim", "", e.to_string()))?;
        Ok(c)
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            tol_kkt: self.config.optimizer.tol_kkt,
            max_iter: self.config.optimizer.max_iter,
            ..OptimizerOptions::default()
        }
    }
}
