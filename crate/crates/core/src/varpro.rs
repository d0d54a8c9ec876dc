//! Variable projection for the two-atom IVIM dictionary.
//!
//! For fixed nonlinear parameters `x = (d, d_star)` the model is linear in the
//! amplitudes `c = (S0·f, S0·(1−f))`:
//!
//! ```text
//! s ≈ Φ(x) c,   Φ(x) = [exp(-b·d_star), exp(-b·d)]
//! ```
//!
//! Eliminating `c` with the pseudoinverse leaves the reduced objective
//! `‖s − Φ Φ⁺ s‖²`, a function of `x` alone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{AcquisitionScheme, DecayCurve, ParamBounds};

/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

/// Multiplier on `‖s‖²` returned by [`reduced_objective`] for an
/// ill-conditioned dictionary.
pub const ILL_CONDITIONED_PENALTY: f64 = 1e30;

/// The nonlinear (exponent) parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearParams {
    pub d: f64,
    pub d_star: f64,
}

impl NonlinearParams {
    /// Checked constructor: both coefficients must lie inside their boxes.
    pub fn new(d: f64, d_star: f64, bounds: &ParamBounds) -> Result<Self> {
        let x = Self { d, d_star };
        if !(bounds.d.0 <= d && d <= bounds.d.1) {
            return Err(Error::Domain(format!(
                "d = {d} outside [{}, {}]",
                bounds.d.0, bounds.d.1
            )));
        }
        if !(bounds.d_star.0 <= d_star && d_star <= bounds.d_star.1) {
            return Err(Error::Domain(format!(
                "d_star = {d_star} outside [{}, {}]",
                bounds.d_star.0, bounds.d_star.1
            )));
        }
        Ok(x)
    }

    /// Constructor with bounds disabled; only finiteness and sign are checked
    /// when the dictionary is built.
    pub fn unbounded(d: f64, d_star: f64) -> Self {
        Self { d, d_star }
    }
}

/// Atom evaluations, `n_bvalues × 2`: column 0 is the perfusion atom
/// `exp(-b·d_star)`, column 1 the diffusion atom `exp(-b·d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: DMatrix<f64>,
}

impl Dictionary {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.column(j).iter().copied().collect()
    }

    /// `Φ c` for the given amplitudes.
    pub fn combine(&self, c: &LinearCoeffs) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.matrix[(i, 0)] * c.c1 + self.matrix[(i, 1)] * c.c2)
            .collect()
    }

    /// Moore–Penrose pseudoinverse (2 × n) via truncated SVD.
    pub fn pseudoinverse(&self) -> Result<DMatrix<f64>> {
        let svd = self.matrix.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
        let cond = smax / smin;
        if !(smin > SVD_RELATIVE_CUTOFF * smax) {
            return Err(Error::IllConditioned(cond));
        }
        svd.pseudo_inverse(SVD_RELATIVE_CUTOFF * smax)
            .map_err(|_| Error::IllConditioned(cond))
    }
}

/// Linear amplitudes of the two atoms (perfusion, diffusion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCoeffs {
    pub c1: f64,
    pub c2: f64,
}

impl LinearCoeffs {
    pub fn is_nonnegative(&self) -> bool {
        self.c1 >= 0.0 && self.c2 >= 0.0
    }
}

pub fn build_dictionary(x: &NonlinearParams, scheme: &AcquisitionScheme) -> Result<Dictionary> {
    if !(x.d.is_finite() && x.d_star.is_finite() && x.d >= 0.0 && x.d_star >= 0.0) {
        return Err(Error::Domain(format!(
            "nonlinear parameters must be finite and >= 0, got {x:?}"
        )));
    }
    let b = scheme.bvalues();
    let matrix = DMatrix::from_fn(b.len(), 2, |i, j| {
        let rate = if j == 0 { x.d_star } else { x.d };
        (-b[i] * rate).exp()
    });
    Ok(Dictionary { matrix })
}

fn solve(dict: &Dictionary, s: &[f64]) -> Result<LinearCoeffs> {
    let pinv = dict.pseudoinverse()?;
    let c = pinv * DVector::from_column_slice(s);
    Ok(LinearCoeffs { c1: c[0], c2: c[1] })
}

/// Unconstrained least-squares amplitudes `Φ⁺ s`. Coefficients may come out
/// negative; the simplex stage enforces the physical constraints.
pub fn project_linear(x: &NonlinearParams, s: &DecayCurve) -> Result<LinearCoeffs> {
    let dict = build_dictionary(x, s.scheme())?;
    solve(&dict, s.signal())
}

/// Like [`project_linear`], but substitutes the equal split
/// `c1 = c2 = mean(anchor signal) / 2` on an ill-conditioned dictionary.
/// The boolean is `true` when the fallback was taken.
pub fn project_linear_or_fallback(
    x: &NonlinearParams,
    s: &DecayCurve,
) -> Result<(LinearCoeffs, bool)> {
    match project_linear(x, s) {
        Ok(c) => Ok((c, false)),
        Err(Error::IllConditioned(_)) => {
            let half = s.anchor_mean() / 2.0;
            Ok((LinearCoeffs { c1: half, c2: half }, true))
        }
        Err(e) => Err(e),
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

/// Variable-projection objective `‖s − Φ(x) Φ(x)⁺ s‖²`.
///
/// Ill-conditioned dictionaries yield `1e30·‖s‖²` instead of an error so that
/// global search can cross such regions.
pub fn reduced_objective(x: &NonlinearParams, s: &DecayCurve) -> Result<f64> {
    let dict = build_dictionary(x, s.scheme())?;
    Ok(reduced_objective_with(&dict, s.signal()))
}

pub(crate) fn reduced_objective_with(dict: &Dictionary, s: &[f64]) -> f64 {
    match solve(dict, s) {
        Ok(c) => {
            let fitted = dict.combine(&c);
            s.iter()
                .zip(&fitted)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        }
        Err(_) => ILL_CONDITIONED_PENALTY * sum_sq(s),
    }
}

/// Full separable objective `‖s − Φ(x) c‖²` for explicit amplitudes.
pub fn full_objective(x: &NonlinearParams, c: &LinearCoeffs, s: &DecayCurve) -> Result<f64> {
    let dict = build_dictionary(x, s.scheme())?;
    let fitted = dict.combine(c);
    Ok(s.signal()
        .iter()
        .zip(&fitted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Orthogonal projector `Φ Φ⁺` onto the dictionary's column space.
pub fn projector(x: &NonlinearParams, scheme: &AcquisitionScheme) -> Result<DMatrix<f64>> {
    let dict = build_dictionary(x, scheme)?;
    let pinv = dict.pseudoinverse()?;
    Ok(dict.matrix() * pinv)
}
