//! Goodness-of-fit and comparison statistics.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AcquisitionScheme, DecayCurve, IvimParams};
use crate::pipeline::{fit_with_method, voxel_seed, FitConfig, FitResult, Method, VoxelVolume};

/// Two disjoint folds covering every sample index of a curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvSplit {
    folds: [Vec<usize>; 2],
    seed: Option<u64>,
}

impl CvSplit {
    pub fn new(fold_a: Vec<usize>, fold_b: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in fold_a.iter().chain(&fold_b) {
            if i >= n {
                return Err(Error::DegenerateFold(format!("index {i} out of range for {n} samples")));
            }
            if seen[i] {
                return Err(Error::DegenerateFold(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DegenerateFold("folds do not cover every sample".into()));
        }
        if fold_a.len() < 2 || fold_b.len() < 2 {
            return Err(Error::DegenerateFold(format!(
                "folds need >= 2 samples each, got {} and {}",
                fold_a.len(),
                fold_b.len()
            )));
        }
        let mut folds = [fold_a, fold_b];
        folds.iter_mut().for_each(|f| f.sort_unstable());
        Ok(Self { folds, seed: None })
    }

    /// Even indices in one fold, odd in the other.
    pub fn interleaved(n: usize) -> Result<Self> {
        Self::new((0..n).step_by(2).collect(), (1..n).step_by(2).collect(), n)
    }

    /// Seeded random halves. When the scheme has several anchor (smallest-b)
    /// samples, each fold receives at least one.
    pub fn random(scheme: &AcquisitionScheme, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<usize> = scheme.anchor_indices().collect();
        let mut rest: Vec<usize> = (0..scheme.len()).collect();
        let mut folds = [Vec::new(), Vec::new()];
        if anchors.len() >= 2 {
            let mut a = anchors.clone();
            a.shuffle(&mut rng);
            folds[0].push(a[0]);
            folds[1].push(a[1]);
            rest.retain(|i| *i != a[0] && *i != a[1]);
        }
        rest.shuffle(&mut rng);
        for i in rest {
            let k = usize::from(folds[0].len() > folds[1].len());
            folds[k].push(i);
        }
        let [a, b] = folds;
        let mut split = Self::new(a, b, scheme.len())?;
        split.seed = Some(seed);
        Ok(split)
    }

    pub fn folds(&self) -> &[Vec<usize>; 2] {
        &self.folds
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// `1 − SS_res/SS_tot`, or `None` when the observations have no variance.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Option<f64> {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 || !ss_tot.is_finite() {
        return None;
    }
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Cross-validated R². A fold that cannot be fit, or a curve without
/// variance, yields `r2 = NaN` together with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub r2: f64,
    pub failure: Option<Error>,
}

impl CvScore {
    fn failed(e: Error) -> Self {
        Self {
            r2: f64::NAN,
            failure: Some(e),
        }
    }
}

/// Fits each fold and predicts the other; R² of the concatenated predictions
/// against the full measured curve.
pub fn cross_validate(curve: &DecayCurve, method: Method, cfg: &FitConfig, split: &CvSplit) -> Result<CvScore> {
    if split.folds.iter().flatten().any(|&i| i >= curve.len()) {
        return Err(Error::ShapeMismatch(format!(
            "split does not match a curve of {} samples",
            curve.len()
        )));
    }
    let mut predicted = vec![f64::NAN; curve.len()];
    for (train, test) in [(0, 1), (1, 0)] {
        let fold = match curve.subset(&split.folds[train]) {
            Ok(c) => c,
            Err(e) => return Ok(CvScore::failed(Error::DegenerateFold(e.to_string()))),
        };
        let fit = match fit_with_method(&fold, method, cfg) {
            Ok(r) => r,
            Err(e) => return Ok(CvScore::failed(Error::DegenerateFold(e.to_string()))),
        };
        let held: Vec<f64> = split.folds[test].iter().map(|&i| curve.bvalues()[i]).collect();
        for (&i, p) in split.folds[test].iter().zip(fit.predict(&held)) {
            predicted[i] = p;
        }
    }
    Ok(match r_squared(curve.signal(), &predicted) {
        Some(r2) => CvScore { r2, failure: None },
        None => CvScore::failed(Error::DegenerateFold("measured curve has zero variance".into())),
    })
}

/// [`cross_validate`] for every masked-in voxel of a volume on `workers`
/// threads; masked-out voxels get `None`. Each voxel is fit with its own
/// [`voxel_seed`], so results do not depend on the worker count.
pub fn cross_validate_volume(
    volume: &VoxelVolume,
    method: Method,
    cfg: &FitConfig,
    split: &CvSplit,
    workers: usize,
) -> Result<Vec<Option<CvScore>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..volume.voxel_count())
            .into_par_iter()
            .map(|v| {
                if !volume.is_masked_in(v) {
                    return Ok(None);
                }
                let voxel_cfg = FitConfig {
                    seed: voxel_seed(cfg.seed, v),
                    ..*cfg
                };
                match volume.curve(v) {
                    Ok(c) => cross_validate(&c, method, &voxel_cfg, split).map(Some),
                    Err(e) => Ok(Some(CvScore::failed(Error::DegenerateFold(e.to_string())))),
                }
            })
            .collect()
    })
}

/// R² of a fit on the whole curve, evaluated on the same samples.
pub fn training_r2(curve: &DecayCurve, fit: &FitResult) -> Option<f64> {
    r_squared(curve.signal(), &fit.predict(curve.bvalues()))
}

/// Five-number summary with linearly interpolated quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Summary of the finite entries of `values`; all `NaN` when there are none.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            min: q(0.0),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: q(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    CvR2,
    MseS0,
    MseFullCurve,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::CvR2 => "cv_r2",
            Metric::MseS0 => "mse_s0",
            Metric::MseFullCurve => "mse_full_curve",
        }
    }
}

/// Per-voxel scores of one method. Voxels without a score hold `NaN` and are
/// left out of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub method: String,
    pub metric: Metric,
    pub per_voxel: Vec<f64>,
    pub summary: Quantiles,
}

impl ScoreReport {
    pub fn new(method: impl Into<String>, metric: Metric, per_voxel: Vec<f64>) -> Self {
        let summary = Quantiles::of(&per_voxel);
        Self {
            method: method.into(),
            metric,
            per_voxel,
            summary,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.per_voxel.iter().filter(|v| v.is_finite()).count()
    }
}

/// What an MSE report compares against.
#[derive(Debug, Clone, Copy)]
pub enum MseTarget<'a> {
    /// Squared error of fitted `s0` against known truth.
    S0 { truth: &'a [f64], fitted: &'a [f64] },
    /// Mean squared residual of the reconstructed curve against the data.
    FullCurve {
        data: &'a [DecayCurve],
        fitted: &'a [IvimParams],
    },
}

pub fn mse_report(method: &str, target: MseTarget<'_>) -> Result<ScoreReport> {
    match target {
        MseTarget::S0 { truth, fitted } => {
            if truth.len() != fitted.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} truth values for {} fitted voxels",
                    truth.len(),
                    fitted.len()
                )));
            }
            let per_voxel = truth.iter().zip(fitted).map(|(t, f)| (f - t).powi(2)).collect();
            Ok(ScoreReport::new(method, Metric::MseS0, per_voxel))
        }
        MseTarget::FullCurve { data, fitted } => {
            if data.len() != fitted.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} curves for {} fitted voxels",
                    data.len(),
                    fitted.len()
                )));
            }
            let per_voxel = data
                .iter()
                .zip(fitted)
                .map(|(c, p)| {
                    let pred = p.predict(c.bvalues());
                    let sse: f64 = pred.iter().zip(c.signal()).map(|(a, b)| (a - b).powi(2)).sum();
                    sse / c.len() as f64
                })
                .collect();
            Ok(ScoreReport::new(method, Metric::MseFullCurve, per_voxel))
        }
    }
}

/// Cost summary of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedRow {
    pub method: String,
    pub curves: usize,
    pub total_evaluations: usize,
    pub median_evaluations: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedReport {
    pub rows: Vec<SpeedRow>,
}

impl SpeedReport {
    pub fn row(&self, method: &str) -> Option<&SpeedRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Ratio of median evaluation counts, `numerator / denominator`.
    pub fn evaluation_ratio(&self, numerator: &str, denominator: &str) -> Option<f64> {
        Some(self.row(numerator)?.median_evaluations / self.row(denominator)?.median_evaluations)
    }

    pub fn wall_time_ratio(&self, numerator: &str, denominator: &str) -> Option<f64> {
        Some(self.row(numerator)?.wall_time.as_secs_f64() / self.row(denominator)?.wall_time.as_secs_f64())
    }
}

/// Evaluation counts are the sums of the per-stage counters of each result.
pub fn speed_report<'a, I>(methods: I) -> SpeedReport
where
    I: IntoIterator<Item = (&'a str, &'a [FitResult])>,
{
    let rows = methods
        .into_iter()
        .map(|(method, results)| {
            let counts: Vec<f64> = results.iter().map(|r| r.evaluations() as f64).collect();
            SpeedRow {
                method: method.to_string(),
                curves: results.len(),
                total_evaluations: results.iter().map(FitResult::evaluations).sum(),
                median_evaluations: Quantiles::of(&counts).median,
                wall_time: results.iter().map(FitResult::elapsed).sum(),
            }
        })
        .collect();
    SpeedReport { rows }
}
