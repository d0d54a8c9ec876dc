use crate::error::{Error, Result};
use crate::varpro::Dictionary;

/// `min ‖t − A f‖²` subject to `f1 + f2 = 1`, `f ∈ [0, 1]²`, for a two-column
/// design `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexLsProblem {
    col1: Vec<f64>,
    col2: Vec<f64>,
    target: Vec<f64>,
}

/// Solution of a [`SimplexLsProblem`]. `f1 + f2 == 1` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexSolution {
    pub f1: f64,
    pub f2: f64,
    /// Set when the two columns coincide and every feasible `f` is optimal.
    pub degenerate: bool,
}

impl SimplexLsProblem {
    pub fn new(col1: Vec<f64>, col2: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let n = target.len();
        if n < 2 {
            return Err(Error::ShapeMismatch(format!(
                "simplex problem needs at least 2 rows, got {n}"
            )));
        }
        if col1.len() != n || col2.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "design columns ({}, {}) do not match target length {n}",
                col1.len(),
                col2.len()
            )));
        }
        if col1.iter().chain(&col2).chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::Domain("simplex problem contains non-finite values".into()));
        }
        Ok(Self { col1, col2, target })
    }

    pub fn from_dictionary(dict: &Dictionary, target: &[f64]) -> Result<Self> {
        Self::new(dict.column(0), dict.column(1), target.to_vec())
    }

    /// Objective at `f1` (with `f2 = 1 − f1`).
    pub fn objective(&self, f1: f64) -> f64 {
        let f2 = 1.0 - f1;
        self.col1
            .iter()
            .zip(&self.col2)
            .zip(&self.target)
            .map(|((a, b), t)| {
                let r = t - (f1 * a + f2 * b);
                r * r
            })
            .sum()
    }
}

/// Exact solution. Substituting `f2 = 1 − f1` leaves a 1-D quadratic in `f1`
/// whose minimizer is clamped to `[0, 1]`.
pub fn solve_simplex_ls(p: &SimplexLsProblem) -> SimplexSolution {
    let mut ww = 0.0;
    let mut wt = 0.0;
    let mut scale = 0.0;
    for ((a, b), t) in p.col1.iter().zip(&p.col2).zip(&p.target) {
        let w = a - b;
        ww += w * w;
        wt += w * (t - b);
        scale += a * a + b * b;
    }
    if ww <= 1e-28 * scale || ww == 0.0 {
        return SimplexSolution {
            f1: 0.5,
            f2: 0.5,
            degenerate: true,
        };
    }
    let f1 = (wt / ww).clamp(0.0, 1.0);
    SimplexSolution {
        f1,
        f2: 1.0 - f1,
        degenerate: false,
    }
}
