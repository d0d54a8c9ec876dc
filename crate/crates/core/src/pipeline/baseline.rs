//! Reference fitters: segmented least squares and a fit with `d_star` frozen.

use std::time::Instant;

use super::{normalization, on_bound, refine_subset, s0_box, sum_sq_diff, FitConfig, FitFlags, FitResult, Stage, StageRecord};
use crate::error::{Error, Result};
use crate::lsq::{BoxBounds, LocalResult};
use crate::model::{DecayCurve, IvimParams};

/// Log-linear fit `ln s = ln s_t − b·d` over the samples with `b ≥ split`.
struct TissueFit {
    s_t: f64,
    d: f64,
    /// Sum of squared residuals of `s_t·exp(−b·d)` on the used samples.
    objective: f64,
    fallback: bool,
}

fn tissue_fit(curve: &DecayCurve, split: f64, d_range: (f64, f64)) -> TissueFit {
    let pts: Vec<(f64, f64)> = curve
        .bvalues()
        .iter()
        .zip(curve.signal())
        .filter(|&(&b, &s)| b >= split && s > 0.0)
        .map(|(&b, &s)| (b, s))
        .collect();
    let n = pts.len() as f64;
    let mean_b = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_b).powi(2)).sum();
    if pts.len() < 2 || sxx <= 0.0 {
        let d = (d_range.0 * d_range.1).sqrt();
        let s_t = if pts.is_empty() {
            curve.anchor_mean().abs()
        } else {
            pts.iter().map(|p| p.1).sum::<f64>() / n
        };
        return TissueFit {
            s_t,
            d,
            objective: f64::NAN,
            fallback: true,
        };
    }
    let mean_y = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_b) * (p.1.ln() - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_b;
    let d = (-slope).clamp(d_range.0, d_range.1);
    let s_t = intercept.exp();
    let objective = pts.iter().map(|&(b, s)| (s_t * (-b * d).exp() - s).powi(2)).sum();
    TissueFit {
        s_t,
        d,
        objective,
        fallback: false,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    refined: Result<(LocalResult, [f64; 4])>,
    template: [f64; 4],
    bounds: &BoxBounds,
    free: &[usize],
    y: &[f64],
    bvalues: &[f64],
    scale: f64,
    started: Instant,
    mut stages: Vec<StageRecord>,
    mut flags: FitFlags,
) -> FitResult {
    let scale2 = scale * scale;
    let mut params = match refined {
        Ok((res, p)) => {
            flags.not_converged = !res.converged;
            stages.push(StageRecord {
                stage: Stage::Refine,
                objective: res.value * scale2,
                evaluations: res.evaluations,
                elapsed: started.elapsed(),
            });
            p
        }
        Err(_) => {
            flags.not_converged = true;
            let obj = sum_sq_diff(&IvimParams::from_array(template).predict(bvalues), y);
            stages.push(StageRecord {
                stage: Stage::Refine,
                objective: obj * scale2,
                evaluations: 0,
                elapsed: started.elapsed(),
            });
            template
        }
    };
    flags.hit_bounds = free
        .iter()
        .enumerate()
        .any(|(k, &i)| on_bound(params[i], bounds.lower()[k], bounds.upper()[k]));
    params[0] *= scale;
    FitResult {
        params: IvimParams::from_array(params),
        stages,
        flags,
    }
}

/// Segmented fit: `d` from a log-linear fit on `b ≥ split`, then
/// `(s0, f, d_star)` by bounded least squares on the whole curve with `d`
/// frozen.
pub fn fit_baseline_msnlls(curve: &DecayCurve, split: f64, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let below = curve.bvalues().iter().filter(|&&b| b < split).count();
    let above = curve.len() - below;
    if below < 2 || above < 2 {
        return Err(Error::InsufficientSplit { split, below, above });
    }
    let (scale, degenerate) = normalization(curve, cfg.normalize);
    let b = &cfg.bounds;

    let t = Instant::now();
    let tissue = tissue_fit(curve, split, b.d);
    let stages = vec![StageRecord {
        stage: Stage::LogLinear,
        objective: tissue.objective,
        evaluations: 1,
        elapsed: t.elapsed(),
    }];
    let flags = FitFlags {
        degenerate_projection: degenerate || tissue.fallback,
        ..FitFlags::default()
    };

    let t = Instant::now();
    let y = curve.scaled(1.0 / scale)?;
    let (s0_lo, s0_hi) = s0_box(cfg, scale);
    let f0 = (1.0 - tissue.s_t / scale).clamp(b.f.0, b.f.1);
    let d_star0 = (b.d_star.0 * b.d_star.1).sqrt();
    let template = [1.0f64.clamp(s0_lo, s0_hi), f0, d_star0, tissue.d];
    let free = [0, 1, 2];
    let bounds = BoxBounds::new(vec![s0_lo, b.f.0, b.d_star.0], vec![s0_hi, b.f.1, b.d_star.1])?;
    let refined = refine_subset(curve.bvalues(), y.signal(), template, &free, &bounds, &cfg.trr);
    Ok(finish(refined, template, &bounds, &free, y.signal(), curve.bvalues(), scale, t, stages, flags))
}

/// Fit of `(s0, f, d)` with `d_star` frozen at `d_star_fixed`, started from a
/// log-linear fit on `b ≥ cfg.split_b` when enough samples exist there.
pub fn fit_baseline_dstar_fixed(curve: &DecayCurve, d_star_fixed: f64, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if !(d_star_fixed.is_finite() && d_star_fixed > 0.0) {
        return Err(Error::InvalidConfig(format!("d_star_fixed must be > 0, got {d_star_fixed}")));
    }
    let (scale, degenerate) = normalization(curve, cfg.normalize);
    let b = &cfg.bounds;

    let t = Instant::now();
    let tissue = tissue_fit(curve, cfg.split_b, b.d);
    let stages = vec![StageRecord {
        stage: Stage::LogLinear,
        objective: tissue.objective,
        evaluations: 1,
        elapsed: t.elapsed(),
    }];
    let flags = FitFlags {
        degenerate_projection: degenerate,
        ..FitFlags::default()
    };

    let t = Instant::now();
    let y = curve.scaled(1.0 / scale)?;
    let (s0_lo, s0_hi) = s0_box(cfg, scale);
    let f0 = (1.0 - tissue.s_t / scale).clamp(b.f.0, b.f.1);
    let template = [1.0f64.clamp(s0_lo, s0_hi), f0, d_star_fixed, tissue.d];
    let free = [0, 1, 3];
    let bounds = BoxBounds::new(vec![s0_lo, b.f.0, b.d.0], vec![s0_hi, b.f.1, b.d.1])?;
    let refined = refine_subset(curve.bvalues(), y.signal(), template, &free, &bounds, &cfg.trr);
    Ok(finish(refined, template, &bounds, &free, y.signal(), curve.bvalues(), scale, t, stages, flags))
}
