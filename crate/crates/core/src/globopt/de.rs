use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lhs::latin_hypercube_with;
use super::{push_best, GlobalResult, LocalMinimum, ObjectiveHandle};
use crate::error::{Error, Result};
use crate::lsq::{bqn_minimize_with, BoxBounds, BqnConfig};

/// Settings for [`de_minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    pub population: usize,
    /// Mutation factor range; a fresh `F` is drawn uniformly per generation.
    pub mutation: (f64, f64),
    pub crossover: f64,
    pub max_generations: usize,
    /// Stop when `max − min ≤ atol + tol·|mean|` over the population values.
    pub tol: f64,
    pub atol: f64,
    pub seed: u64,
    /// Refine the final best member with the bounded quasi-Newton routine.
    pub polish: bool,
    pub local: BqnConfig,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 30,
            mutation: (0.5, 1.0),
            crossover: 0.7,
            max_generations: 200,
            tol: 1e-8,
            atol: 0.0,
            seed: 0,
            polish: true,
            local: BqnConfig::default(),
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 5 {
            return Err(Error::InvalidConfig(format!(
                "population must be >= 5, got {}",
                self.population
            )));
        }
        if !(self.crossover > 0.0 && self.crossover <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "crossover rate must lie in (0, 1], got {}",
                self.crossover
            )));
        }
        let (lo, hi) = self.mutation;
        if !(lo > 0.0 && hi < 2.0 && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "mutation range must satisfy 0 < lo <= hi < 2, got ({lo}, {hi})"
            )));
        }
        if !(self.tol >= 0.0 && self.atol >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

/// Two distinct indices, both different from `exclude` entries.
fn pick_two<R: Rng>(rng: &mut R, n: usize, exclude: &[usize]) -> (usize, usize) {
    let draw = |rng: &mut R, also: Option<usize>| loop {
        let k = rng.random_range(0..n);
        if !exclude.contains(&k) && Some(k) != also {
            return k;
        }
    };
    let r1 = draw(rng, None);
    let r2 = draw(rng, Some(r1));
    (r1, r2)
}

fn best_index(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap()
}

/// Differential evolution, `best/1/bin` strategy.
///
/// The population starts from a latin hypercube in the unit cube. Each
/// generation draws `F`, builds the mutant `x_best + F·(x_r1 − x_r2)` for every
/// member, applies binomial crossover with one forced mutant gene, resamples
/// out-of-box genes uniformly and keeps the trial when it is no worse. Trials
/// are built from the population at the start of the generation. The result is
/// deterministic per seed.
pub fn de_minimize<F>(obj: &ObjectiveHandle<F>, cfg: &DeConfig) -> Result<GlobalResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let dim = obj.dim();
    let np = cfg.population;
    let start = obj.evaluations();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop = latin_hypercube_with(dim, np, &mut rng);
    let mut values: Vec<f64> = pop.iter().map(|u| obj.evaluate_unit(u)).collect();
    let mut best = best_index(&values);
    let mut trace = Vec::new();
    push_best(&mut trace, values[best]);

    for _ in 0..cfg.max_generations {
        let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = values.iter().sum::<f64>() / np as f64;
        if spread <= cfg.atol + cfg.tol * mean.abs() {
            break;
        }
        let f = rng.random_range(cfg.mutation.0..=cfg.mutation.1);
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (r1, r2) = pick_two(&mut rng, np, &[best, i]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        if j == forced || rng.random::<f64>() < cfg.crossover {
                            let v = pop[best][j] + f * (pop[r1][j] - pop[r2][j]);
                            if (0.0..=1.0).contains(&v) {
                                v
                            } else {
                                rng.random::<f64>()
                            }
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        for (i, trial) in trials.into_iter().enumerate() {
            let v = obj.evaluate_unit(&trial);
            if v <= values[i] {
                pop[i] = trial;
                values[i] = v;
            }
        }
        best = best_index(&values);
        push_best(&mut trace, values[best]);
    }

    let mut best_u = pop[best].clone();
    let mut best_value = values[best];
    if cfg.polish {
        let local = bqn_minimize_with(
            |u: &[f64]| obj.evaluate_unit(u),
            &best_u,
            &BoxBounds::unit(dim),
            &cfg.local,
        )?;
        if local.value < best_value {
            best_u = local.point;
            best_value = local.value;
        }
        push_best(&mut trace, best_value);
    }

    let point = obj.to_physical(&best_u);
    Ok(GlobalResult {
        point: point.clone(),
        value: best_value,
        evaluations: obj.evaluations() - start,
        trace,
        pool_size: None,
        local_minima: vec![LocalMinimum {
            point,
            value: best_value,
        }],
    })
}
