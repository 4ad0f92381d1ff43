//! Uniform age grid with composite trapezoid quadrature.
//!
//! Every integral over the age interval `[0, A]` is realized as a weighted
//! sum over the grid nodes, and every integral operator `x ↦ ∫ k(x,y) f(y) dy`
//! as a dense matrix-vector product against the same weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretization of `[0, a_max]` into `n` equispaced nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    a_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl AgeGrid {
    pub fn uniform(a_max: f64, n: usize) -> Result<Arc<Self>> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::invalid(format!("a_max must be positive, got {a_max}")));
        }
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes, got {n}")));
        }
        let h = a_max / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        nodes[n - 1] = a_max;
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Arc::new(AgeGrid { a_max, nodes, weights }))
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.a_max / (self.n() - 1) as f64
    }

    /// `Σ_i w_i f_i`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.integrate_unchecked(values))
    }

    pub(crate) fn integrate_unchecked(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, f)| w * f).sum()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: len });
        }
        Ok(())
    }

    /// Two grids are interchangeable when they have the same endpoint and node count.
    pub fn same_as(&self, other: &AgeGrid) -> bool {
        std::ptr::eq(self, other) || (self.a_max == other.a_max && self.n() == other.n())
    }
}

/// A function of age sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeDensity {
    grid: Arc<AgeGrid>,
    values: Vec<f64>,
}

/// Serialized as the bare list of nodal values.
impl Serialize for AgeDensity {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl AgeDensity {
    pub fn new(grid: Arc<AgeGrid>, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("density value at node {i} is not finite")));
        }
        Ok(AgeDensity { grid, values })
    }

    pub fn zeros(grid: Arc<AgeGrid>) -> Self {
        let n = grid.n();
        AgeDensity { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<AgeGrid>, c: f64) -> Result<Self> {
        let n = grid.n();
        Self::new(grid, vec![c; n])
    }

    pub fn from_fn(grid: Arc<AgeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate_unchecked(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn ensure_same_grid(&self, other: &AgeDensity) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AgeDensity {
        AgeDensity { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &AgeDensity, f: impl Fn(f64, f64) -> f64) -> Result<AgeDensity> {
        self.ensure_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(AgeDensity { grid: self.grid.clone(), values })
    }

    pub fn scale(&self, c: f64) -> AgeDensity {
        self.map(|v| c * v)
    }

    /// `self + c·other`
    pub fn axpy(&self, c: f64, other: &AgeDensity) -> Result<AgeDensity> {
        self.zip_map(other, |a, b| a + c * b)
    }

    /// `Σ w_i a_i b_i`, the quadrature inner product.
    pub fn dot(&self, other: &AgeDensity) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self
            .grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &AgeDensity) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(max_abs_diff(&self.values, &other.values))
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Dense `n×n` kernel; row index is the susceptible age `x`, column the infectious age `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    grid: Arc<AgeGrid>,
    values: Vec<f64>,
}

impl Kernel {
    /// Row-major values. Entries must be finite and non-negative; strict
    /// positivity is a model-level assumption checked by [`Kernel::is_strictly_positive`].
    pub fn new(grid: Arc<AgeGrid>, values: Vec<f64>) -> Result<Self> {
        let n = grid.n();
        if values.len() != n * n {
            return Err(Error::LengthMismatch { expected: n * n, got: values.len() });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "kernel entry ({}, {}) = {} is not a finite non-negative number",
                p / n,
                p % n,
                values[p]
            )));
        }
        Ok(Kernel { grid, values })
    }

    pub fn from_fn(grid: Arc<AgeGrid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let nodes = grid.nodes();
        let values = nodes.iter().flat_map(|&x| nodes.iter().map(move |&y| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<AgeGrid>, c: f64) -> Result<Self> {
        Self::from_fn(grid, |_, _| c)
    }

    /// `k(x,y) = b(y)`, the same row repeated.
    pub fn separable(profile: &AgeDensity) -> Result<Self> {
        let n = profile.len();
        let values = (0..n).flat_map(|_| profile.values().iter().copied()).collect();
        Self::new(profile.grid().clone(), values)
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Largest relative deviation of any row from row 0.
    pub fn separability_defect(&self) -> f64 {
        let first = self.row(0);
        let scale = first.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return if self.is_zero() { 0.0 } else { f64::INFINITY };
        }
        (1..self.n()).fold(0.0_f64, |m, i| m.max(max_abs_diff(self.row(i), first) / scale))
    }

    pub fn is_separable(&self, rel_tol: f64) -> bool {
        self.separability_defect() <= rel_tol
    }

    /// `k(x,y)·c(y)`.
    pub fn scale_columns(&self, c: &[f64]) -> Result<Kernel> {
        self.grid.check_len(c.len())?;
        let n = self.n();
        let values = self.values.iter().enumerate().map(|(p, v)| v * c[p % n]).collect();
        Ok(Kernel { grid: self.grid.clone(), values })
    }

    pub fn scale(&self, c: f64) -> Kernel {
        Kernel { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.n();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[j * n + i] = self.values[i * n + j];
            }
        }
        Kernel { grid: self.grid.clone(), values }
    }

    /// `out[i] = Σ_j k[i][j]·w_j·f[j]` into a caller-owned buffer.
    pub(crate) fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n();
        let w = self.grid.weights();
        let wf: Vec<f64> = w.iter().zip(f).map(|(w, f)| w * f).collect();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.values[i * n..(i + 1) * n];
            *o = row.iter().zip(&wf).map(|(k, g)| k * g).sum();
        }
    }

    pub(crate) fn apply_slice(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply_into(f, &mut out);
        out
    }
}

/// `x ↦ ∫ k(x,y) f(y) dy` under the grid quadrature.
pub fn apply_kernel(k: &Kernel, f: &AgeDensity) -> Result<AgeDensity> {
    if !k.grid.same_as(f.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(AgeDensity { grid: f.grid().clone(), values: k.apply_slice(f.values()) })
}

/// `∫ f(x) dx` under the grid quadrature.
pub fn integrate(f: &AgeDensity) -> f64 {
    f.integral()
}
