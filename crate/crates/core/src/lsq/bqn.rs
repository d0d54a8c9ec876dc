use std::collections::VecDeque;

use super::{projected_gradient_norm, BoxBounds, LocalResult};
use crate::error::{Error, Result};

/// Settings for [`bqn_minimize_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BqnConfig {
    pub max_iterations: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Tolerance on the infinity norm of the projected gradient.
    pub gtol: f64,
    /// Step tolerance, relative to each box width.
    pub xtol: f64,
    /// Finite-difference step, relative to each box width.
    pub fd_step: f64,
}

impl Default for BqnConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            memory: 5,
            gtol: 1e-10,
            xtol: 1e-12,
            fd_step: 1e-6,
        }
    }
}

const ARMIJO: f64 = 1e-4;

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    /// Central differences, one-sided where a probe would leave the box.
    fn gradient(&mut self, x: &[f64], fx: f64, bounds: &BoxBounds, rel_step: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = rel_step * bounds.width(i);
            let up = x[i] + h <= bounds.upper()[i];
            let down = x[i] - h >= bounds.lower()[i];
            let mut at = |v: f64, this: &mut Self| {
                probe[i] = v;
                let f = this.eval(&probe);
                probe[i] = x[i];
                f
            };
            g[i] = match (up, down) {
                (true, true) => (at(x[i] + h, self) - at(x[i] - h, self)) / (2.0 * h),
                (true, false) => (at(x[i] + h, self) - fx) / h,
                (false, true) => (fx - at(x[i] - h, self)) / h,
                (false, false) => 0.0,
            };
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bounded quasi-Newton minimization with the default [`BqnConfig`].
pub fn bqn_minimize<F>(obj: F, x0: &[f64], bounds: &BoxBounds) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> f64,
{
    bqn_minimize_with(obj, x0, bounds, &BqnConfig::default())
}

/// Gradient-projection descent with limited-memory BFGS directions on the free
/// variables and a projected Armijo backtracking search. Every accepted step
/// decreases the objective, so the trace is monotone.
pub fn bqn_minimize_with<F>(
    obj: F,
    x0: &[f64],
    bounds: &BoxBounds,
    cfg: &BqnConfig,
) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if x0.len() != bounds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "start point has {} coordinates, box has {}",
            x0.len(),
            bounds.dim()
        )));
    }
    if cfg.memory == 0 || !(cfg.fd_step > 0.0 && cfg.gtol > 0.0 && cfg.xtol > 0.0) {
        return Err(Error::InvalidConfig(format!("{cfg:?}")));
    }
    let n = x0.len();
    let mut obj = Counted { f: obj, evals: 0 };
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut fx = obj.eval(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteResidual { iteration: 0 });
    }
    let mut g = obj.gradient(&x, fx, bounds, cfg.fd_step);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.memory);
    let mut trace = vec![fx];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if projected_gradient_norm(&x, &g, bounds) <= cfg.gtol {
            converged = true;
            break;
        }
        iterations += 1;

        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..n)
            .map(|i| {
                !((x[i] <= bounds.lower()[i] && g[i] > 0.0)
                    || (x[i] >= bounds.upper()[i] && g[i] < 0.0))
            })
            .collect();
        let g_free: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();

        let mut accepted = None;
        let mut try_memory = !memory.is_empty();
        loop {
            let dir = if try_memory {
                let d = two_loop(&g_free, &memory, &free);
                if dot(&d, &g_free) >= 0.0 {
                    memory.clear();
                    try_memory = false;
                    continue;
                }
                d
            } else {
                let dmax = (0..n)
                    .map(|i| g_free[i].abs() / bounds.width(i))
                    .fold(0.0, f64::max);
                if dmax == 0.0 {
                    break;
                }
                // First steepest-descent trial moves at most a quarter box width.
                let scale = 0.25 / dmax;
                g_free.iter().map(|gi| -gi * scale).collect()
            };
            if let Some(step) = line_search(&mut obj, &x, fx, &g, &dir, bounds, cfg.xtol) {
                accepted = Some(step);
                break;
            }
            if !try_memory {
                break;
            }
            memory.clear();
            try_memory = false;
        }

        let Some((x_new, f_new)) = accepted else {
            // No acceptable step above the step tolerance.
            converged = true;
            break;
        };
        let g_new = obj.gradient(&x_new, f_new, bounds, cfg.fd_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
    }

    Ok(LocalResult {
        grad_norm: projected_gradient_norm(&x, &g, bounds),
        point: x,
        value: fx,
        iterations,
        converged,
        evaluations: obj.evals,
        trace,
    })
}

/// L-BFGS two-loop recursion restricted to the free coordinates.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(x, &f)| if f { *x } else { 0.0 })
            .collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        memory.iter().map(|(s, y)| (mask(s), mask(y))).collect();
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = pairs.last() {
        let yy = dot(y, y);
        let sy = dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Projected backtracking: tries `P(x + α d)` for α = 1, ½, ¼, … until the
/// Armijo condition holds with a strict decrease, or the step falls below `xtol`.
fn line_search<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    dir: &[f64],
    bounds: &BoxBounds,
    xtol: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut alpha = 1.0;
    loop {
        let mut trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        bounds.clamp(&mut trial);
        let tiny = trial
            .iter()
            .zip(x)
            .enumerate()
            .all(|(i, (a, b))| (a - b).abs() <= xtol * bounds.width(i));
        if tiny {
            return None;
        }
        let decrease: f64 = trial.iter().zip(x).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
        let ft = obj.eval(&trial);
        if ft.is_finite() && ft < fx && ft <= fx + ARMIJO * decrease {
            return Some((trial, ft));
        }
        alpha *= 0.5;
    }
}
