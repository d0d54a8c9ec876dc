//! Constrained least-squares and local minimization.
//!
//! * [`solve_simplex_ls`] — two-column linear least squares on the simplex
//!   `f1 + f2 = 1`, solved in closed form.
//! * [`trr_minimize`] — bound-constrained nonlinear least squares with a
//!   reflective trust-region method.
//! * [`bqn_minimize`] — bound-constrained limited-memory quasi-Newton descent
//!   with finite-difference gradients, used to polish global-search results.

mod bqn;
mod simplex;
mod trr;

pub use bqn::{bqn_minimize, bqn_minimize_with, BqnConfig};
pub use simplex::{solve_simplex_ls, SimplexLsProblem, SimplexSolution};
pub use trr::{trr_minimize, TrrConfig};

use crate::error::{Error, Result};

/// Axis-aligned box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidBounds(format!(
                "lower/upper lengths {} and {} must match and be non-zero",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidBounds(format!(
                    "dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit box `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Outcome of a local solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub point: Vec<f64>,
    /// Objective at `point` (sum of squared residuals for least squares).
    pub value: f64,
    /// Infinity norm of the projected gradient at `point`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective (or residual) evaluations spent, including gradient probes.
    pub evaluations: usize,
    /// Accepted objective values, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Infinity norm of `P(x − g) − x` where `P` projects onto the box.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &BoxBounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| ((xi - gi).clamp(bounds.lower[i], bounds.upper[i]) - xi).abs())
        .fold(0.0, f64::max)
}
