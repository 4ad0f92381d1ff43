//! Principal eigenvalue of `L φ = φ − ∫ k(·,y) φ(y) dy` for positive kernels.
//!
//! Power iteration on `M φ = ∫ k(·,y) φ(y) dy` gives the spectral radius `ρ`
//! with a positive eigenfunction, and `λ1 = 1 − ρ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{AgeDensity, Kernel};
use crate::model::EpidemicModel;

pub const TOL_EIG: f64 = 1e-12;
pub const MAX_POWER_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda1: f64,
    /// Spectral radius of `M`.
    pub rho: f64,
    /// Positive eigenfunction with `‖φ1‖_∞ = 1`.
    pub phi1: AgeDensity,
    pub iterations: usize,
    /// `‖M φ1 − ρ φ1‖_∞`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    Spreads,
    NoSpread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub classification: Classification,
    pub eigen: EigenResult,
}

impl Threshold {
    pub fn lambda1(&self) -> f64 {
        self.eigen.lambda1
    }
}

fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

pub fn principal_eigenvalue(k: &Kernel) -> Result<EigenResult> {
    let grid = k.grid().clone();
    let w = grid.weights();
    let n = grid.n();
    let mut phi = vec![1.0; n];
    let mut rho = f64::NAN;
    let mut change = f64::INFINITY;
    for it in 1..=MAX_POWER_ITER {
        let psi = k.apply_slice(&phi);
        let norm = psi.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            // M φ = 0 for a positive φ: the kernel vanishes on the support.
            return Ok(EigenResult { lambda1: 1.0, rho: 0.0, phi1: AgeDensity::new(grid, phi)?, iterations: it, residual: 0.0 });
        }
        let next = weighted_dot(w, &phi, &psi) / weighted_dot(w, &phi, &phi);
        change = (next - rho).abs();
        rho = next;
        phi = psi.iter().map(|x| x / norm).collect();
        if change < TOL_EIG * rho.max(1.0) {
            let mphi = k.apply_slice(&phi);
            let residual = mphi.iter().zip(&phi).fold(0.0_f64, |m, (a, b)| m.max((a - rho * b).abs()));
            return Ok(EigenResult { lambda1: 1.0 - rho, rho, phi1: AgeDensity::new(grid, phi)?, iterations: it, residual });
        }
    }
    Err(Error::EigenNoConvergence { iterations: MAX_POWER_ITER, last_change: change })
}

/// `k(x,y) = β(x,y)·S(y)/μ(y)`.
pub fn stability_kernel(model: &EpidemicModel, s: &AgeDensity) -> Result<Kernel> {
    if !model.grid().same_as(s.grid()) {
        return Err(Error::GridMismatch);
    }
    let c: Vec<f64> = s.values().iter().zip(model.mu().values()).map(|(s, m)| s.max(0.0) / m).collect();
    model.beta().scale_columns(&c)
}

/// Adjoint of [`stability_kernel`] in `L²(S/μ)`: `k*(x,y) = β(y,x)·S(y)/μ(y)`.
pub fn stability_adjoint_kernel(model: &EpidemicModel, s: &AgeDensity) -> Result<Kernel> {
    if !model.grid().same_as(s.grid()) {
        return Err(Error::GridMismatch);
    }
    let c: Vec<f64> = s.values().iter().zip(model.mu().values()).map(|(s, m)| s.max(0.0) / m).collect();
    model.beta().transpose().scale_columns(&c)
}

/// Sign of `λ1` for `k = β S0/μ`: `λ1 ≥ 0` means no spread.
pub fn classify_threshold(model: &EpidemicModel) -> Result<Threshold> {
    let eigen = principal_eigenvalue(&stability_kernel(model, model.s0())?)?;
    let classification = if eigen.lambda1 >= 0.0 { Classification::NoSpread } else { Classification::Spreads };
    Ok(Threshold { classification, eigen })
}

/// Principal eigenvalue of the linearisation around the final state `S∞`.
pub fn post_epidemic_eigenvalue(model: &EpidemicModel, s_inf: &AgeDensity) -> Result<EigenResult> {
    principal_eigenvalue(&stability_kernel(model, s_inf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finalsize::solve_final_size;
    use crate::grid::AgeGrid;
    use crate::model::StaticAllocation;
    use proptest::prelude::*;

    #[test]
    fn homogeneous_closed_form() {
        for &(beta, expected) in &[(2.0, -1.0), (0.5, 0.5)] {
            let m = EpidemicModel::homogeneous(1.0, 200, beta, 1.0, 1.0, 1e-4).unwrap();
            let t = classify_threshold(&m).unwrap();
            assert!((t.lambda1() - expected).abs() < 1e-8);
            let want = if expected < 0.0 { Classification::Spreads } else { Classification::NoSpread };
            assert_eq!(t.classification, want);
        }
    }

    #[test]
    fn rank_one_radius_is_quadrature_of_product() {
        let g = AgeGrid::uniform(1.0, 41).unwrap();
        let a = |x: f64| 1.0 + x * x;
        let b = |y: f64| (-(y - 0.3).powi(2)).exp();
        let k = Kernel::from_fn(g.clone(), |x, y| a(x) * b(y)).unwrap();
        let ab = AgeDensity::from_fn(g, |x| a(x) * b(x)).unwrap().integral();
        let e = principal_eigenvalue(&k).unwrap();
        assert!((e.lambda1 - (1.0 - ab)).abs() < 1e-10);
    }

    #[test]
    fn zero_kernel_gives_identity() {
        let g = AgeGrid::uniform(1.0, 11).unwrap();
        let e = principal_eigenvalue(&Kernel::constant(g, 0.0).unwrap()).unwrap();
        assert_eq!(e.lambda1, 1.0);
        let m = EpidemicModel::homogeneous(1.0, 11, 2.0, 1.0, 1.0, 1e-4).unwrap();
        let z = AgeDensity::zeros(m.grid().clone());
        assert_eq!(post_epidemic_eigenvalue(&m, &z).unwrap().lambda1, 1.0);
    }

    fn gaussian_model(n: usize) -> EpidemicModel {
        let g = AgeGrid::uniform(1.0, n).unwrap();
        EpidemicModel::new(
            Kernel::from_fn(g.clone(), |x, y| 3.0 * (-(x - y).powi(2) / 0.2).exp() + 0.2 * x).unwrap(),
            AgeDensity::from_fn(g.clone(), |x| 0.5 + x).unwrap(),
            AgeDensity::from_fn(g.clone(), |x| 1.0 + 0.5 * (4.0 * x).cos()).unwrap(),
            AgeDensity::constant(g, 1e-4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn eigenpair_is_positive_with_small_residual() {
        let m = gaussian_model(60);
        let t = classify_threshold(&m).unwrap();
        assert!(t.eigen.phi1.values().iter().all(|&p| p > 0.0));
        assert!((t.eigen.phi1.sup_norm() - 1.0).abs() < 1e-15);
        assert!(t.eigen.residual < 1e-9);
    }

    #[test]
    fn adjoint_has_the_same_principal_eigenvalue() {
        let m = gaussian_model(50);
        let s_inf = solve_final_size(&m, &StaticAllocation::zero(&m)).unwrap().s_inf;
        let a = principal_eigenvalue(&stability_kernel(&m, &s_inf).unwrap()).unwrap();
        let b = principal_eigenvalue(&stability_adjoint_kernel(&m, &s_inf).unwrap()).unwrap();
        assert!((a.lambda1 - b.lambda1).abs() < 1e-9);
        assert!(a.lambda1 > 1e-10);
    }

    #[test]
    fn post_epidemic_homogeneous_closed_form() {
        let m = EpidemicModel::homogeneous(1.0, 101, 2.0, 1.0, 1.0, 1e-4).unwrap();
        let s_inf = solve_final_size(&m, &StaticAllocation::zero(&m)).unwrap().s_inf;
        let e = post_epidemic_eigenvalue(&m, &s_inf).unwrap();
        assert!((e.lambda1 - (1.0 - 2.0 * s_inf.values()[0])).abs() < 1e-12);
        assert!((e.lambda1 - 0.594).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn radius_scales_linearly(c in 0.01f64..20.0, width in 0.05f64..1.0) {
            let g = AgeGrid::uniform(1.0, 25).unwrap();
            let k = Kernel::from_fn(g, |x, y| (-(x - y).powi(2) / width).exp() + 0.1).unwrap();
            let base = principal_eigenvalue(&k).unwrap();
            let scaled = principal_eigenvalue(&k.scale(c)).unwrap();
            prop_assert!((scaled.rho - c * base.rho).abs() <= 1e-10 * c * base.rho);
            prop_assert!((scaled.lambda1 - (1.0 - c * base.rho)).abs() <= 1e-10 * c * base.rho.max(1.0));
        }
    }
}
