use super::complex::{extract_pool, SimplicialComplex};
use super::{push_best, sobol_points, GlobalResult, LocalMinimum, ObjectiveHandle};
use crate::error::{Error, Result};
use crate::lsq::{bqn_minimize_with, BoxBounds, BqnConfig};

/// Settings for [`shgo_minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShgoConfig {
    /// Sobol samples in the first iteration; doubled on every further one.
    pub n_samples: usize,
    pub iterations: usize,
    pub local: BqnConfig,
}

impl Default for ShgoConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            iterations: 1,
            local: BqnConfig::default(),
        }
    }
}

impl ShgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 8 {
            return Err(Error::InvalidConfig(format!(
                "shgo needs at least 8 samples, got {}",
                self.n_samples
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("shgo needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Unit-cube distance below which two polished points count as one minimum.
const SAME_MINIMUM: f64 = 1e-6;

/// Simplicial homology global optimization over a 2-D box.
///
/// Each iteration samples Sobol points, triangulates them, orients the edges
/// by objective value and extracts the minimizer pool (local sinks). Every
/// pool vertex not polished before is refined with the bounded quasi-Newton
/// routine. Later iterations double the sample count; earlier samples are a
/// prefix of the sequence and keep their cached values. Fully deterministic.
pub fn shgo_minimize<F>(obj: &ObjectiveHandle<F>, cfg: &ShgoConfig) -> Result<GlobalResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if obj.dim() != 2 {
        return Err(Error::UnsupportedDimension(obj.dim()));
    }
    let start = obj.evaluations();
    let unit = BoxBounds::unit(2);
    let mut values: Vec<f64> = Vec::new();
    let mut polished_from: Vec<usize> = Vec::new();
    let mut minima: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut pool_size = 0;

    for it in 0..cfg.iterations {
        let n = cfg.n_samples << it;
        let samples = sobol_points(2, n, 0)?;
        for u in &samples[values.len()..] {
            values.push(obj.evaluate_unit(u));
        }
        let sampled_best = values.iter().copied().fold(f64::INFINITY, f64::min);
        push_best(&mut trace, sampled_best);

        let points = samples.iter().map(|u| [u[0], u[1]]).collect();
        let complex = SimplicialComplex::build(points, values.clone());
        let pool = extract_pool(&complex);
        pool_size = pool.len();

        for &v in &pool.vertices {
            if polished_from.contains(&v) {
                continue;
            }
            polished_from.push(v);
            let local = bqn_minimize_with(|u: &[f64]| obj.evaluate_unit(u), &samples[v], &unit, &cfg.local)?;
            let (point, value) = if local.value <= values[v] {
                (local.point, local.value)
            } else {
                (samples[v].clone(), values[v])
            };
            let duplicate = minima.iter_mut().find(|(p, _)| {
                p.iter().zip(&point).all(|(a, b)| (a - b).abs() <= SAME_MINIMUM)
            });
            match duplicate {
                Some(m) if value < m.1 => *m = (point, value),
                Some(_) => {}
                None => minima.push((point, value)),
            }
        }
        let polished_best = minima.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        push_best(&mut trace, polished_best);
    }

    minima.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0[0].total_cmp(&b.0[0])));
    let (best_u, best_value) = minima[0].clone();
    Ok(GlobalResult {
        point: obj.to_physical(&best_u),
        value: best_value,
        evaluations: obj.evaluations() - start,
        trace,
        pool_size: Some(pool_size),
        local_minima: minima
            .into_iter()
            .map(|(u, value)| LocalMinimum {
                point: obj.to_physical(&u),
                value,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_in_box() {
        let bounds = BoxBounds::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let obj = ObjectiveHandle::new(|x: &[f64]| x[0] * x[0] + (x[1] - 1.0).powi(2), bounds);
        let r = shgo_minimize(&obj, &ShgoConfig::default()).unwrap();
        assert!(r.value < 1e-10, "{r:?}");
        assert_eq!(r.pool_size, Some(1));
        assert_eq!(r.evaluations, obj.evaluations());
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_and_iterations_grow_samples() {
        let bounds = BoxBounds::unit(2);
        let f = |x: &[f64]| (6.0 * x[0]).sin() + (5.0 * x[1]).cos() + x[0];
        let a = shgo_minimize(&ObjectiveHandle::new(f, bounds.clone()), &ShgoConfig::default()).unwrap();
        let b = shgo_minimize(&ObjectiveHandle::new(f, bounds.clone()), &ShgoConfig::default()).unwrap();
        assert_eq!(a, b);
        let cfg = ShgoConfig {
            iterations: 3,
            ..ShgoConfig::default()
        };
        let c = shgo_minimize(&ObjectiveHandle::new(f, bounds), &cfg).unwrap();
        assert!(c.evaluations >= 256);
        assert!(c.value <= a.value);
    }

    #[test]
    fn rejects_bad_configs() {
        let obj = ObjectiveHandle::new(|x: &[f64]| x[0], BoxBounds::unit(2));
        let cfg = ShgoConfig {
            n_samples: 4,
            ..ShgoConfig::default()
        };
        assert!(shgo_minimize(&obj, &cfg).is_err());
        let obj3 = ObjectiveHandle::new(|x: &[f64]| x[0], BoxBounds::unit(3));
        assert!(shgo_minimize(&obj3, &ShgoConfig::default()).is_err());
    }
}
