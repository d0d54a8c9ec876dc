use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivimfit::evalstats::{
    cross_validate_volume, mse_report, speed_report, CvSplit, Metric, MseTarget, ScoreReport,
};
use ivimfit::model::{simulate, DecayCurve, IvimParams, NoiseSpec};
use ivimfit::pipeline::{fit_volume, voxel_seed, FitResult, Method, ParameterMaps, VoxelVolume, FLAG_MASKED};

use crate::config::{CvMode, OutputFormat, RunConfig, TruthValue};
use crate::io::{self, Staged, Truth};

/// Options shared by every command after merging flags and config.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: RunConfig,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub method: Option<Method>,
    pub seed: u64,
    pub workers: usize,
}

impl Common {
    fn input(&self) -> Result<&Path> {
        self.input.as_deref().context("missing --input")
    }
}

fn draw(value: TruthValue, rng: &mut ChaCha8Rng) -> f64 {
    match value {
        TruthValue::Constant(v) => v,
        TruthValue::Range([lo, hi]) if lo < hi => rng.random_range(lo..hi),
        TruthValue::Range([lo, _]) => lo,
    }
}

pub fn simulate_cmd(c: &Common) -> Result<Staged> {
    let cfg = &c.config;
    let sim = &cfg.simulate;
    let scheme = cfg.scheme()?;
    let mask = cfg.mask()?;
    ensure!(sim.dims.iter().all(|&d| d > 0), "field `simulate.dims` must be positive, got {:?}", sim.dims);
    for (name, t) in [
        ("s0", sim.truth.s0),
        ("f", sim.truth.f),
        ("d_star", sim.truth.d_star),
        ("d", sim.truth.d),
    ] {
        if let TruthValue::Range([lo, hi]) = t {
            ensure!(lo <= hi && lo.is_finite() && hi.is_finite(), "field `simulate.truth.{name}`: invalid range [{lo}, {hi}]");
        }
    }
    cfg.noise(0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let voxels = mask.len();
    let mut truth = Vec::with_capacity(voxels);
    let mut curves = Vec::with_capacity(voxels);
    for (v, &inside) in mask.iter().enumerate() {
        let values = [
            draw(sim.truth.s0, &mut rng),
            draw(sim.truth.f, &mut rng),
            draw(sim.truth.d_star, &mut rng),
            draw(sim.truth.d, &mut rng),
        ];
        let p = IvimParams::new(values[0], values[1], values[2], values[3])
            .with_context(|| format!("section `simulate.truth` (voxel {v})"))?;
        let noise: NoiseSpec = cfg.noise(voxel_seed(c.seed, v))?;
        let curve = simulate(&p, &scheme, &noise)?;
        truth.push(inside.then_some(p));
        curves.push(inside.then(|| curve.signal().to_vec()));
    }

    let mut out = Staged::default();
    match sim.format {
        OutputFormat::Volume => {
            let n = scheme.len();
            let data: Vec<f64> = curves
                .iter()
                .flat_map(|c| c.clone().unwrap_or_else(|| vec![f64::NAN; n]))
                .collect();
            let volume = VoxelVolume::new(sim.dims, scheme, data, Some(mask))?;
            let (hdr, raw) = io::encode_volume(&volume);
            out.add_text(c.output.join("volume.hdr"), hdr);
            out.add(c.output.join("volume.raw"), raw);
            out.add_text(
                c.output.join("truth.csv"),
                io::encode_truth(&Truth {
                    dims: sim.dims,
                    params: truth,
                }),
            );
        }
        OutputFormat::Table => {
            let kept: Vec<Vec<f64>> = curves.into_iter().flatten().collect();
            let params: Vec<Option<IvimParams>> = truth.into_iter().filter(Option::is_some).collect();
            out.add_text(c.output.join("curves.csv"), io::encode_table(&scheme, &kept));
            out.add_text(
                c.output.join("truth.csv"),
                io::encode_truth(&Truth {
                    dims: [params.len().max(1), 1, 1],
                    params,
                }),
            );
        }
    }
    Ok(out)
}

fn stage_maps(out: &mut Staged, dir: &Path, maps: &ParameterMaps) {
    let flags: Vec<f64> = maps
        .flags
        .iter()
        .map(|&f| if f == FLAG_MASKED { f64::NAN } else { f as f64 })
        .collect();
    for (name, values) in [
        ("s0", &maps.s0),
        ("f", &maps.f),
        ("d_star", &maps.d_star),
        ("d", &maps.d),
        ("flags", &flags),
    ] {
        let csv = if name == "flags" {
            let as_int: Vec<f64> = maps.flags.iter().map(|&f| f as f64).collect();
            io::encode_map_csv(maps.dims, &as_int)
        } else {
            io::encode_map_csv(maps.dims, values)
        };
        out.add_text(dir.join(format!("{name}.csv")), csv);
        out.add(dir.join(format!("{name}.pgm")), io::encode_pgm(name, maps.dims, values));
    }
}

fn report_csv(volume: &VoxelVolume, method: Method, maps: &ParameterMaps) -> String {
    let mut out = String::from("voxel,x,y,z,method,stage,objective,evaluations\n");
    for (v, r) in maps.results.iter().enumerate() {
        let [x, y, z] = volume.coords(v);
        if let Some(r) = r {
            for s in &r.stages {
                let _ = writeln!(out, "{v},{x},{y},{z},{method},{},{},{}", s.stage.name(), s.objective, s.evaluations);
            }
        }
    }
    out
}

pub fn fit_cmd(c: &Common) -> Result<Staged> {
    let volume = io::read_input(c.input()?)?;
    let method = c.config.method(c.method)?;
    let cfg = c.config.fit_config(c.seed)?;
    let start = Instant::now();
    let maps = fit_volume(&volume, method, &cfg, c.workers)?;
    let fitted = maps.results.iter().flatten().count();
    eprintln!(
        "fit: {fitted} voxels with {method} on {} worker(s) in {:.3} s ({} evaluations)",
        c.workers,
        start.elapsed().as_secs_f64(),
        maps.evaluations()
    );
    let mut out = Staged::default();
    stage_maps(&mut out, &c.output, &maps);
    out.add_text(c.output.join("report.csv"), report_csv(&volume, method, &maps));
    Ok(out)
}

fn truth_path(c: &Common) -> Result<Option<PathBuf>> {
    if let Some(p) = &c.config.evaluate.truth {
        return Ok(Some(p.clone()));
    }
    let sibling = c.input()?.parent().unwrap_or(Path::new(".")).join("truth.csv");
    Ok(sibling.exists().then_some(sibling))
}

fn scattered(n: usize, idx: &[usize], values: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; n];
    for (&i, &v) in idx.iter().zip(values) {
        out[i] = v;
    }
    out
}

pub fn evaluate_cmd(c: &Common) -> Result<Staged> {
    let volume = io::read_input(c.input()?)?;
    let n = volume.voxel_count();
    let truth = match truth_path(c)? {
        Some(p) => {
            let t = io::read_truth(&p)?;
            ensure!(
                t.len() == n,
                "{}: {} truth rows do not align with {n} input voxels",
                p.display(),
                t.len()
            );
            Some(t)
        }
        None => None,
    };
    let methods = c.config.methods(c.method)?;
    let cfg = c.config.fit_config(c.seed)?;
    let split = match c.config.evaluate.cv {
        CvMode::Interleaved => CvSplit::interleaved(volume.scheme().len())?,
        CvMode::Random => CvSplit::random(volume.scheme(), c.seed)?,
    };

    let mut scores = String::from("method,voxel,x,y,z,cv_r2,mse_s0,mse_full_curve\n");
    let mut summary = String::from("method,metric,n,min,q25,median,q75,max\n");
    let mut all_results: Vec<(String, Vec<FitResult>)> = Vec::new();
    for &method in &methods {
        let start = Instant::now();
        let maps = fit_volume(&volume, method, &cfg, c.workers)?;
        let cv = cross_validate_volume(&volume, method, &cfg, &split, c.workers)?;
        eprintln!(
            "evaluate: {method} on {} worker(s) in {:.3} s",
            c.workers,
            start.elapsed().as_secs_f64()
        );
        let r2: Vec<f64> = cv.iter().map(|s| s.as_ref().map_or(f64::NAN, |s| s.r2)).collect();
        let cv_report = ScoreReport::new(method.name(), Metric::CvR2, r2);

        let mse_s0 = match &truth {
            Some(t) => {
                let t_s0: Vec<f64> = t.iter().map(|p| p.map_or(f64::NAN, |p| p.s0)).collect();
                Some(mse_report(method.name(), MseTarget::S0 { truth: &t_s0, fitted: &maps.s0 })?)
            }
            None => None,
        };
        let mut idx = Vec::new();
        let mut curves: Vec<DecayCurve> = Vec::new();
        let mut params = Vec::new();
        for (v, r) in maps.results.iter().enumerate() {
            if let (Some(r), Ok(curve)) = (r, volume.curve(v)) {
                idx.push(v);
                curves.push(curve);
                params.push(r.params);
            }
        }
        let full = mse_report(
            method.name(),
            MseTarget::FullCurve {
                data: &curves,
                fitted: &params,
            },
        )?;
        let full = ScoreReport::new(method.name(), Metric::MseFullCurve, scattered(n, &idx, &full.per_voxel));

        for v in 0..n {
            if !volume.is_masked_in(v) {
                continue;
            }
            let [x, y, z] = volume.coords(v);
            let s0 = mse_s0.as_ref().map_or(f64::NAN, |r| r.per_voxel[v]);
            let _ = writeln!(
                scores,
                "{method},{v},{x},{y},{z},{},{s0},{}",
                cv_report.per_voxel[v], full.per_voxel[v]
            );
        }
        for report in [Some(&cv_report), mse_s0.as_ref(), Some(&full)].into_iter().flatten() {
            let q = report.summary;
            let _ = writeln!(
                summary,
                "{method},{},{},{},{},{},{},{}",
                report.metric.name(),
                report.valid_count(),
                q.min,
                q.q25,
                q.median,
                q.q75,
                q.max
            );
        }
        all_results.push((method.name().to_string(), maps.results.into_iter().flatten().collect()));
    }

    let speed = speed_report(all_results.iter().map(|(m, r)| (m.as_str(), r.as_slice())));
    let mut speed_csv = String::from("method,curves,total_evaluations,median_evaluations,ratio_to_varpro_sh\n");
    for row in &speed.rows {
        let ratio = speed
            .evaluation_ratio(&row.method, Method::VarproSh.name())
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            speed_csv,
            "{},{},{},{},{ratio}",
            row.method, row.curves, row.total_evaluations, row.median_evaluations
        );
        eprintln!("evaluate: {} fit wall time {:.3} s", row.method, row.wall_time.as_secs_f64());
    }
    if let Some(r) = speed.wall_time_ratio(Method::VarproDe.name(), Method::VarproSh.name()) {
        eprintln!("evaluate: wall-time ratio varpro_de / varpro_sh = {r:.3}");
    }

    let mut out = Staged::default();
    out.add_text(c.output.join("scores.csv"), scores);
    out.add_text(c.output.join("summary.csv"), summary);
    out.add_text(c.output.join("speed.csv"), speed_csv);
    Ok(out)
}
