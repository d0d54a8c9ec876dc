use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{projected_gradient_norm, BoxBounds, LocalResult};
use crate::error::{Error, Result};

/// Settings for [`trr_minimize`]. Radii and step tolerances refer to the
/// scaled variables, in which every box is `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrrConfig {
    pub max_iterations: usize,
    /// Tolerance on the infinity norm of the scaled projected gradient.
    pub gtol: f64,
    /// Relative step tolerance.
    pub xtol: f64,
    pub initial_radius: f64,
}

impl Default for TrrConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gtol: 1e-10,
            xtol: 1e-12,
            initial_radius: 1.0,
        }
    }
}

impl TrrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.gtol > 0.0 && self.xtol > 0.0 && self.initial_radius > 0.0)
        {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

const ACCEPT: f64 = 1e-4;
const SHRINK_BELOW: f64 = 0.25;
const EXPAND_ABOVE: f64 = 0.75;
/// Distance from the bounds, as a fraction of box width, used to move a
/// starting point into the strict interior.
const INTERIOR_MARGIN: f64 = 1e-8;

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Folds a scaled coordinate back into `[0, 1]` by mirroring at the faces.
fn reflect(mut z: f64) -> f64 {
    for _ in 0..64 {
        if z < 0.0 {
            z = -z;
        } else if z > 1.0 {
            z = 2.0 - z;
        } else {
            return z;
        }
    }
    z.clamp(0.0, 1.0)
}

/// Solves `min g·p + ½ pᵀHp` subject to `‖p‖ ≤ radius` through the
/// eigen-decomposition of `H` and a search on the Levenberg parameter.
fn trust_region_step(h: &DMatrix<f64>, g: &DVector<f64>, radius: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let a = q.transpose() * g;
    let lmax = lam.max().max(0.0);
    let floor = 1e-15 * lmax.max(f64::MIN_POSITIVE);
    let step_at = |mu: f64| -> DVector<f64> {
        let coef = DVector::from_iterator(
            a.len(),
            a.iter().zip(lam.iter()).map(|(ai, li)| {
                let denom = (li + mu).max(floor);
                -ai / denom
            }),
        );
        q * coef
    };
    let lmin = lam.min();
    if lmin > floor {
        let p = step_at(0.0);
        if p.norm() <= radius {
            return p;
        }
    }
    let mut lo = (-lmin).max(0.0);
    let mut hi = lo + g.norm() / radius + lmax + floor;
    while step_at(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if step_at(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    step_at(hi)
}

/// Bound-constrained nonlinear least squares, `min ½‖r(x)‖²` over a box.
///
/// Variables are scaled so that the box is the unit cube. Each iteration solves
/// the Gauss–Newton trust-region subproblem, then forms three feasible
/// candidates from the step: the reflected point (mirrored at every crossed
/// face), the projected point and the step truncated at the first face. The
/// candidate with the best model value is tested against the actual reduction.
///
/// The start point is moved into the strict interior first. The returned point
/// never has a larger objective than the caller's `x0` when `x0` is feasible.
/// Running out of iterations returns the best point with `converged = false`.
pub fn trr_minimize<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &[f64],
    bounds: &BoxBounds,
    cfg: &TrrConfig,
) -> Result<LocalResult>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> DMatrix<f64>,
{
    cfg.validate()?;
    let n = bounds.dim();
    if x0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "start point has {} coordinates, box has {n}",
            x0.len()
        )));
    }
    let width: Vec<f64> = (0..n).map(|i| bounds.width(i)).collect();
    let to_x = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, zi)| (bounds.lower()[i] + zi * width[i]).clamp(bounds.lower()[i], bounds.upper()[i]))
            .collect()
    };
    let mut evaluations = 0usize;

    let x0_feasible = bounds.contains(x0);
    let mut z: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, v)| {
            ((v - bounds.lower()[i]) / width[i]).clamp(INTERIOR_MARGIN, 1.0 - INTERIOR_MARGIN)
        })
        .collect();
    let mut x = to_x(&z);
    let mut r = residual(&x);
    evaluations += 1;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual { iteration: 0 });
    }
    let mut cost = sum_sq(&r);
    let mut trace = vec![cost];
    let mut radius = cfg.initial_radius;
    let mut converged = false;
    let mut iterations = 0;
    let unit = BoxBounds::unit(n);

    let scaled_jacobian = |j: DMatrix<f64>| -> DMatrix<f64> {
        let mut j = j;
        for (c, w) in width.iter().enumerate() {
            j.column_mut(c).scale_mut(*w);
        }
        j
    };
    let mut jz = scaled_jacobian(jacobian(&x));
    let mut grad_norm;

    loop {
        let rv = DVector::from_column_slice(&r);
        let g = jz.transpose() * &rv;
        grad_norm = projected_gradient_norm(&z, g.as_slice(), &unit);
        if grad_norm <= cfg.gtol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;

        let h = jz.transpose() * &jz;
        let p = trust_region_step(&h, &g, radius);
        let model = |s: &DVector<f64>| g.dot(s) + 0.5 * s.dot(&(&h * s));

        let reflected: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| reflect(a + b)).collect();
        let projected: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect();
        let theta = z
            .iter()
            .zip(p.iter())
            .map(|(zi, pi)| {
                if *pi > 0.0 {
                    (1.0 - zi) / pi
                } else if *pi < 0.0 {
                    -zi / pi
                } else {
                    f64::INFINITY
                }
            })
            .fold(1.0, f64::min);
        let truncated: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| (a + theta * b).clamp(0.0, 1.0)).collect();

        let (z_new, pred) = [reflected, projected, truncated]
            .into_iter()
            .map(|cand| {
                let s = DVector::from_iterator(n, cand.iter().zip(&z).map(|(a, b)| a - b));
                let m = model(&s);
                (cand, -2.0 * m)
            })
            .fold((z.clone(), 0.0), |best, c| if c.1 > best.1 { c } else { best });

        let step_norm = z_new
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(pred > 0.0) || step_norm <= cfg.xtol * (cfg.xtol + znorm) {
            radius *= SHRINK_BELOW;
            if radius <= cfg.xtol * (cfg.xtol + znorm) || step_norm <= cfg.xtol * (cfg.xtol + znorm) {
                converged = true;
                break;
            }
            continue;
        }

        let x_new = to_x(&z_new);
        let r_new = residual(&x_new);
        evaluations += 1;
        if r_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual { iteration: iterations });
        }
        let cost_new = sum_sq(&r_new);
        let rho = (cost - cost_new) / pred;

        if rho < SHRINK_BELOW {
            radius = SHRINK_BELOW * radius.min(p.norm());
        } else if rho > EXPAND_ABOVE && p.norm() >= 0.99 * radius {
            radius *= 2.0;
        }

        if rho > ACCEPT && cost_new < cost {
            z = z_new;
            x = x_new;
            r = r_new;
            cost = cost_new;
            trace.push(cost);
            jz = scaled_jacobian(jacobian(&x));
            evaluations += 1;
            if step_norm <= cfg.xtol * (cfg.xtol + znorm) {
                converged = true;
                break;
            }
        } else if radius <= cfg.xtol * (cfg.xtol + znorm) {
            converged = true;
            break;
        }
    }

    // Never hand back something worse than a feasible caller start point.
    if x0_feasible {
        let r0 = residual(x0);
        evaluations += 1;
        if r0.iter().all(|v| v.is_finite()) {
            let c0 = sum_sq(&r0);
            if c0 < cost {
                x = x0.to_vec();
                cost = c0;
                trace.push(cost);
            }
        }
    }

    Ok(LocalResult {
        point: x,
        value: cost,
        grad_norm,
        iterations,
        converged,
        evaluations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_folds_into_unit_interval() {
        assert_eq!(reflect(0.3), 0.3);
        assert!((reflect(1.25) - 0.75).abs() < 1e-15);
        assert!((reflect(-0.4) - 0.4).abs() < 1e-15);
        assert!((reflect(2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trust_region_step_respects_radius() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1e-3]);
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let p = trust_region_step(&h, &g, 0.1);
        assert!(p.norm() <= 0.1 * (1.0 + 1e-9));
        assert!(g.dot(&p) < 0.0);
        let p = trust_region_step(&h, &g, 1e6);
        assert!((p[0] + 0.5).abs() < 1e-12 && (p[1] + 1e3).abs() < 1e-6);
    }

    #[test]
    fn linear_problem_matches_normal_equations() {
        // r = A x − b with an interior solution; oracle by the 2×2 normal equations.
        let a = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 1.0]];
        let b = [1.0, 0.7, 0.4, 1.3];
        let (mut ata, mut atb) = ([[0.0; 2]; 2], [0.0; 2]);
        for (row, bi) in a.iter().zip(&b) {
            for i in 0..2 {
                atb[i] += row[i] * bi;
                for j in 0..2 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
        let exact = [
            (ata[1][1] * atb[0] - ata[0][1] * atb[1]) / det,
            (ata[0][0] * atb[1] - ata[1][0] * atb[0]) / det,
        ];
        let res = |x: &[f64]| a.iter().zip(&b).map(|(row, bi)| row[0] * x[0] + row[1] * x[1] - bi).collect();
        let jac = |_: &[f64]| DMatrix::from_fn(4, 2, |i, j| a[i][j]);
        let bounds = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let out = trr_minimize(res, jac, &[4.0, -4.0], &bounds, &TrrConfig::default()).unwrap();
        assert!(out.converged);
        for i in 0..2 {
            assert!((out.point[i] - exact[i]).abs() < 1e-8, "{:?} vs {:?}", out.point, exact);
        }
    }

    #[test]
    fn active_bound_is_respected_exactly() {
        // Unconstrained optimum at x = 2; box caps at 1.
        let res = |x: &[f64]| vec![x[0] - 2.0, 0.1 * (x[0] - 2.0)];
        let jac = |_: &[f64]| DMatrix::from_column_slice(2, 1, &[1.0, 0.1]);
        let bounds = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let out = trr_minimize(res, jac, &[0.2], &bounds, &TrrConfig::default()).unwrap();
        assert_eq!(out.point[0], 1.0);
        assert!(bounds.contains(&out.point));
    }

    #[test]
    fn non_finite_residual_aborts() {
        let res = |_: &[f64]| vec![f64::NAN];
        let jac = |_: &[f64]| DMatrix::from_element(1, 1, 1.0);
        let bounds = BoxBounds::unit(1);
        let out = trr_minimize(res, jac, &[0.5], &bounds, &TrrConfig::default());
        assert!(matches!(out, Err(Error::NonFiniteResidual { iteration: 0 })));
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        // Rosenbrock residuals need more than two iterations from this start.
        let res = |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
        let jac = |x: &[f64]| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
        let bounds = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let cfg = TrrConfig {
            max_iterations: 2,
            ..TrrConfig::default()
        };
        let out = trr_minimize(res, jac, &[-1.5, 1.8], &bounds, &cfg).unwrap();
        assert!(!out.converged);
        let full = trr_minimize(res, jac, &[-1.5, 1.8], &bounds, &TrrConfig::default()).unwrap();
        assert!(full.converged);
        assert!((full.point[0] - 1.0).abs() < 1e-8 && (full.point[1] - 1.0).abs() < 1e-8);
    }
}
