//! Derivative-free global search over a bounded box.
//!
//! Both optimizers work in the unit cube; an [`ObjectiveHandle`] maps unit
//! coordinates onto the physical box and counts every evaluation.

mod complex;
mod de;
mod delaunay;
mod lhs;
mod shgo;
mod sobol;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use complex::{extract_pool, MinimizerPool, SimplicialComplex};
pub use de::{de_minimize, DeConfig};
pub use delaunay::{circumcircle, triangulate, Point2, Triangulation};
pub use lhs::latin_hypercube;
pub use shgo::{shgo_minimize, ShgoConfig};
pub use sobol::{sobol_points, MAX_SOBOL_DIM};

use crate::lsq::BoxBounds;

/// An objective over a physical box with an exact evaluation counter.
///
/// Non-finite objective values are reported as `f64::MAX` so that every
/// comparison made by the optimizers stays well defined.
pub struct ObjectiveHandle<F> {
    f: F,
    bounds: BoxBounds,
    count: AtomicUsize,
}

impl<F: Fn(&[f64]) -> f64> ObjectiveHandle<F> {
    pub fn new(f: F, bounds: BoxBounds) -> Self {
        Self {
            f,
            bounds,
            count: AtomicUsize::new(0),
        }
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    /// Evaluates at a physical point.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    }

    /// Evaluates at a point of the unit cube.
    pub fn evaluate_unit(&self, u: &[f64]) -> f64 {
        self.evaluate(&self.to_physical(u))
    }

    pub fn to_physical(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, ui)| {
                let (lo, hi) = (self.bounds.lower()[i], self.bounds.upper()[i]);
                (lo + ui * (hi - lo)).clamp(lo, hi)
            })
            .collect()
    }
}

/// A polished local minimum, in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMinimum {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalResult {
    /// Best point, in physical coordinates.
    pub point: Vec<f64>,
    pub value: f64,
    /// Objective evaluations spent by this run.
    pub evaluations: usize,
    /// Best value so far after each phase or generation.
    pub trace: Vec<f64>,
    /// Size of the final minimizer pool (simplicial search only).
    pub pool_size: Option<usize>,
    /// Distinct polished minima, best first.
    pub local_minima: Vec<LocalMinimum>,
}

/// Appends `v` to a best-so-far trace.
pub(crate) fn push_best(trace: &mut Vec<f64>, v: f64) {
    let best = trace.last().map_or(v, |&b| b.min(v));
    trace.push(best);
}
