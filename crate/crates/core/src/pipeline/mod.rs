//! Per-curve and per-volume IVIM fitting.
//!
//! [`fit_curve`] runs three stages on a curve normalized by its anchor (b = 0)
//! signal:
//!
//! 1. **global**: minimize the variable-projection objective over
//!    `(d, d_star)` with simplicial-homology or differential-evolution search;
//! 2. **simplex**: perfusion fraction from the two-atom least squares with
//!    `f_perfusion + f_diffusion = 1`;
//! 3. **refine**: trust-region-reflective fit of all four parameters, started
//!    from the previous stages with `s0` at the normalization constant.
//!
//! The two reference fitters live in [`baseline`].

pub mod baseline;
mod volume;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

pub use baseline::{fit_baseline_dstar_fixed, fit_baseline_msnlls};
pub use volume::{fit_volume, voxel_seed, ParameterMaps, VoxelVolume, FLAG_FAILED, FLAG_MASKED};

use crate::error::{Error, Result};
use crate::globopt::{de_minimize, shgo_minimize, DeConfig, GlobalResult, ObjectiveHandle, ShgoConfig};
use crate::lsq::{solve_simplex_ls, trr_minimize, BoxBounds, LocalResult, SimplexLsProblem, TrrConfig};
use crate::model::{jacobian_rows, signal_at, DecayCurve, IvimParams, ParamBounds};
use crate::varpro::{build_dictionary, project_linear, reduced_objective_with, NonlinearParams};

/// Global optimizer for the nonlinear stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sh,
    De,
}

/// A complete fitting method, including the reference fitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    VarproSh,
    VarproDe,
    Msnlls,
    DstarFixed,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::VarproSh, Method::VarproDe, Method::Msnlls, Method::DstarFixed];

    pub fn name(&self) -> &'static str {
        match self {
            Method::VarproSh => "varpro_sh",
            Method::VarproDe => "varpro_de",
            Method::Msnlls => "msnlls",
            Method::DstarFixed => "dstar_fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageToggles {
    /// Without global search the nonlinear start is the geometric centre of
    /// the `(d, d_star)` box.
    pub global: bool,
    /// Without the simplex stage `f` comes from the unconstrained projection.
    pub simplex: bool,
    pub refine: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            global: true,
            simplex: true,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub optimizer: Optimizer,
    pub shgo: ShgoConfig,
    pub de: DeConfig,
    pub trr: TrrConfig,
    pub bounds: ParamBounds,
    /// Box for `s0` relative to the normalization constant, intersected with
    /// `bounds.s0`.
    pub s0_window: (f64, f64),
    pub normalize: bool,
    /// Seed for stochastic stages; overrides `de.seed`.
    pub seed: u64,
    pub stages: StageToggles,
    /// b-value threshold of the segmented baseline, s/mm².
    pub split_b: f64,
    /// Frozen pseudo-diffusion value of the fixed-D* baseline, mm²/s.
    pub d_star_fixed: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Sh,
            shgo: ShgoConfig::default(),
            de: DeConfig::default(),
            trr: TrrConfig::default(),
            bounds: ParamBounds::default(),
            s0_window: (0.5, 2.0),
            normalize: true,
            seed: 0,
            stages: StageToggles::default(),
            split_b: 400.0,
            d_star_fixed: 7e-3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.shgo.validate()?;
        self.de.validate()?;
        self.trr.validate()?;
        let (lo, hi) = self.s0_window;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("s0_window ({lo}, {hi}) is not a valid range")));
        }
        if !(self.split_b.is_finite() && self.split_b > 0.0) {
            return Err(Error::InvalidConfig(format!("split_b must be > 0, got {}", self.split_b)));
        }
        if !(self.d_star_fixed.is_finite() && self.d_star_fixed > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "d_star_fixed must be > 0, got {}",
                self.d_star_fixed
            )));
        }
        Ok(())
    }

    /// Copy with the optimizer (and, for baselines, nothing else) implied by `method`.
    pub fn for_method(&self, method: Method) -> Self {
        let mut cfg = *self;
        match method {
            Method::VarproSh => cfg.optimizer = Optimizer::Sh,
            Method::VarproDe => cfg.optimizer = Optimizer::De,
            Method::Msnlls | Method::DstarFixed => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Global,
    Simplex,
    Refine,
    LogLinear,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Global => "global",
            Stage::Simplex => "simplex",
            Stage::Refine => "refine",
            Stage::LogLinear => "loglinear",
        }
    }
}

/// Diagnostics for one stage. Objectives are sums of squared residuals in the
/// units of the input signal.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub objective: f64,
    pub evaluations: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitFlags {
    pub degenerate_projection: bool,
    pub hit_bounds: bool,
    pub not_converged: bool,
}

impl FitFlags {
    pub fn bits(&self) -> u8 {
        (self.degenerate_projection as u8) | (self.hit_bounds as u8) << 1 | (self.not_converged as u8) << 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: IvimParams,
    pub stages: Vec<StageRecord>,
    pub flags: FitFlags,
}

impl FitResult {
    /// Objective of the last stage.
    pub fn objective(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.objective)
    }

    /// Total evaluations over all stages.
    pub fn evaluations(&self) -> usize {
        self.stages.iter().map(|s| s.evaluations).sum()
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn elapsed(&self) -> Duration {
        self.stages.iter().map(|s| s.elapsed).sum()
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.params == other.params
            && self.flags == other.flags
            && self.stages.len() == other.stages.len()
            && self.stages.iter().zip(&other.stages).all(|(a, b)| {
                a.stage == b.stage && a.objective.to_bits() == b.objective.to_bits() && a.evaluations == b.evaluations
            })
    }

    /// Model prediction at the given b-values.
    pub fn predict(&self, bvalues: &[f64]) -> Vec<f64> {
        self.params.predict(bvalues)
    }
}

/// Normalization constant: mean signal at the smallest b-value, or a fallback
/// (with the flag set) when that mean is not positive.
pub(crate) fn normalization(curve: &DecayCurve, enabled: bool) -> (f64, bool) {
    if !enabled {
        return (1.0, false);
    }
    let c = curve.anchor_mean();
    if c > 0.0 {
        return (c, false);
    }
    let peak = curve.signal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (if peak > 0.0 { peak } else { 1.0 }, true)
}

pub(crate) fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full-model least squares over a subset of the four parameters, the others
/// frozen at `template`. Works on the normalized signal `y`; `free` lists the
/// parameter positions (`0 = s0, 1 = f, 2 = d_star, 3 = d`).
pub(crate) fn refine_subset(
    bvalues: &[f64],
    y: &[f64],
    template: [f64; 4],
    free: &[usize],
    bounds: &BoxBounds,
    cfg: &TrrConfig,
) -> Result<(LocalResult, [f64; 4])> {
    let full = |x: &[f64]| -> [f64; 4] {
        let mut p = template;
        for (k, &i) in free.iter().enumerate() {
            p[i] = x[k];
        }
        p
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let p = full(x);
        bvalues
            .iter()
            .zip(y)
            .map(|(&b, yi)| signal_at(p[0], p[1], p[2], p[3], b) - yi)
            .collect()
    };
    let jacobian = |x: &[f64]| -> DMatrix<f64> {
        let p = IvimParams::from_array(full(x));
        let rows = jacobian_rows(&p, bvalues);
        DMatrix::from_fn(bvalues.len(), free.len(), |r, c| rows[r][free[c]])
    };
    let x0: Vec<f64> = free.iter().map(|&i| template[i]).collect();
    let mut start = x0.clone();
    bounds.clamp(&mut start);
    let res = trr_minimize(residual, jacobian, &start, bounds, cfg)?;
    let params = full(&res.point);
    Ok((res, params))
}

pub(crate) fn on_bound(x: f64, lo: f64, hi: f64) -> bool {
    let tol = 1e-9 * (hi - lo);
    x - lo <= tol || hi - x <= tol
}

/// `s0` box in normalized units.
pub(crate) fn s0_box(cfg: &FitConfig, scale: f64) -> (f64, f64) {
    let lo = (cfg.bounds.s0.0 / scale).max(cfg.s0_window.0);
    let hi = (cfg.bounds.s0.1 / scale).min(cfg.s0_window.1);
    if lo < hi {
        (lo, hi)
    } else {
        cfg.s0_window
    }
}

fn global_stage(y: &DecayCurve, cfg: &FitConfig) -> Result<(GlobalResult, NonlinearParams)> {
    let b = &cfg.bounds;
    let bounds = BoxBounds::new(vec![b.d.0, b.d_star.0], vec![b.d.1, b.d_star.1])?;
    let scheme = y.scheme();
    let signal = y.signal();
    let objective = |x: &[f64]| -> f64 {
        match build_dictionary(&NonlinearParams::unbounded(x[0], x[1]), scheme) {
            Ok(dict) => reduced_objective_with(&dict, signal),
            Err(_) => f64::MAX,
        }
    };
    let handle = ObjectiveHandle::new(objective, bounds);
    let result = match cfg.optimizer {
        Optimizer::Sh => shgo_minimize(&handle, &cfg.shgo)?,
        Optimizer::De => {
            let de = DeConfig {
                seed: cfg.seed,
                ..cfg.de
            };
            de_minimize(&handle, &de)?
        }
    };
    let x = NonlinearParams::unbounded(result.point[0], result.point[1]);
    Ok((result, x))
}

/// Fits one curve with the variable-projection pipeline.
///
/// Solver trouble is reported through [`FitFlags`]; only invalid
/// configurations produce an error.
pub fn fit_curve(curve: &DecayCurve, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (scale, mut degenerate) = normalization(curve, cfg.normalize);
    let y = curve.scaled(1.0 / scale)?;
    let bvalues = curve.bvalues();
    let scale2 = scale * scale;
    let mut stages = Vec::with_capacity(3);
    let mut flags = FitFlags::default();

    // Nonlinear parameters.
    let t = Instant::now();
    let x = if cfg.stages.global {
        let (g, x) = global_stage(&y, cfg)?;
        stages.push(StageRecord {
            stage: Stage::Global,
            objective: g.value * scale2,
            evaluations: g.evaluations,
            elapsed: t.elapsed(),
        });
        x
    } else {
        let b = &cfg.bounds;
        NonlinearParams::unbounded((b.d.0 * b.d.1).sqrt(), (b.d_star.0 * b.d_star.1).sqrt())
    };

    // Perfusion fraction.
    let t = Instant::now();
    let dict = build_dictionary(&x, y.scheme())?;
    let (f, f_evals) = if cfg.stages.simplex {
        let problem = SimplexLsProblem::from_dictionary(&dict, y.signal())?;
        let sol = solve_simplex_ls(&problem);
        degenerate |= sol.degenerate;
        (sol.f1, 1)
    } else {
        match project_linear(&x, &y) {
            Ok(c) if c.c1 + c.c2 > 0.0 => ((c.c1 / (c.c1 + c.c2)).clamp(0.0, 1.0), 1),
            _ => {
                degenerate = true;
                (0.5, 1)
            }
        }
    };
    let f = f.clamp(cfg.bounds.f.0, cfg.bounds.f.1);
    let start = [1.0, f, x.d_star, x.d];
    let start_objective = sum_sq_diff(&IvimParams::from_array(start).predict(bvalues), y.signal());
    stages.push(StageRecord {
        stage: Stage::Simplex,
        objective: start_objective * scale2,
        evaluations: f_evals,
        elapsed: t.elapsed(),
    });

    let mut params = start;
    if cfg.stages.refine {
        let t = Instant::now();
        let (s0_lo, s0_hi) = s0_box(cfg, scale);
        let b = &cfg.bounds;
        let bounds = BoxBounds::new(vec![s0_lo, b.f.0, b.d_star.0, b.d.0], vec![s0_hi, b.f.1, b.d_star.1, b.d.1])?;
        let mut template = start;
        template[0] = template[0].clamp(s0_lo, s0_hi);
        match refine_subset(bvalues, y.signal(), template, &[0, 1, 2, 3], &bounds, &cfg.trr) {
            Ok((res, p)) => {
                flags.not_converged = !res.converged;
                params = p;
                stages.push(StageRecord {
                    stage: Stage::Refine,
                    objective: res.value * scale2,
                    evaluations: res.evaluations,
                    elapsed: t.elapsed(),
                });
            }
            Err(_) => {
                flags.not_converged = true;
                stages.push(StageRecord {
                    stage: Stage::Refine,
                    objective: start_objective * scale2,
                    evaluations: 0,
                    elapsed: t.elapsed(),
                });
            }
        }
        let lo = bounds.lower();
        let hi = bounds.upper();
        flags.hit_bounds = (0..4).any(|i| on_bound(params[i], lo[i], hi[i]));
    }
    flags.degenerate_projection = degenerate;
    params[0] *= scale;
    Ok(FitResult {
        params: IvimParams::from_array(params),
        stages,
        flags,
    })
}

/// Dispatches to the pipeline or a baseline according to `method`.
pub fn fit_with_method(curve: &DecayCurve, method: Method, cfg: &FitConfig) -> Result<FitResult> {
    let cfg = cfg.for_method(method);
    match method {
        Method::VarproSh | Method::VarproDe => fit_curve(curve, &cfg),
        Method::Msnlls => fit_baseline_msnlls(curve, cfg.split_b, &cfg),
        Method::DstarFixed => fit_baseline_dstar_fixed(curve, cfg.d_star_fixed, &cfg),
    }
}
