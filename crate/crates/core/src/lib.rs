//! Age-structured SIR epidemics with vaccination: simulation, final sizes,
//! spectral threshold and optimal vaccine allocation.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod finalsize;
pub mod grid;
pub mod io;
pub mod ivp;
pub mod model;
pub mod ovp;
pub mod spectral;

pub use dynamics::{simulate, SimConfig, State, Trajectory};
pub use error::{Error, Result};
pub use finalsize::{objective_ivp, solve_final_size, solve_final_size_separable, FinalSizeSolution, ScalarSummary};
pub use grid::{apply_kernel, integrate, AgeDensity, AgeGrid, Kernel};
pub use ivp::{bathtub_allocate, optimize_projected_gradient, sweep_budget, BathtubAllocation, OptimizerReport};
pub use model::{Budget, EpidemicModel, StaticAllocation, TimeProfile, VaccinationPlan};
pub use ovp::{maximizing_sequence, objective_ovp, upper_bound_audit, EquivalenceReport};
pub use spectral::{classify_threshold, post_epidemic_eigenvalue, principal_eigenvalue, Classification, EigenResult};
