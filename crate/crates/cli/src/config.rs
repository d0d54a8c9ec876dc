//! TOML run configuration. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ivimfit::globopt::{DeConfig, ShgoConfig};
use ivimfit::lsq::TrrConfig;
use ivimfit::model::{AcquisitionScheme, NoiseKind, NoiseSpec, ParamBounds, STANDARD_BVALUES};
use ivimfit::pipeline::{FitConfig, Method, StageToggles};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub method: Option<String>,
    pub bvalues: Option<Vec<f64>>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

/// A truth parameter: one value for every voxel, or a `[lo, hi]` range drawn
/// uniformly per voxel.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TruthValue {
    Constant(f64),
    Range([f64; 2]),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    pub s0: TruthValue,
    pub f: TruthValue,
    pub d_star: TruthValue,
    pub d: TruthValue,
}

impl Default for TruthSection {
    fn default() -> Self {
        Self {
            s0: TruthValue::Constant(1.0),
            f: TruthValue::Constant(0.235),
            d_star: TruthValue::Constant(0.0146),
            d: TruthValue::Constant(0.00087),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Volume,
    Table,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: Option<String>,
    pub snr: Option<f64>,
}

/// Which voxels are simulated: `"all"`, `"none"`, or an explicit 0/1 list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Keyword(String),
    Explicit(Vec<u8>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub dims: [usize; 3],
    pub format: OutputFormat,
    pub mask: MaskSpec,
    pub truth: TruthSection,
    pub noise: NoiseSection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            dims: [4, 4, 1],
            format: OutputFormat::Volume,
            mask: MaskSpec::Keyword("all".into()),
            truth: TruthSection::default(),
            noise: NoiseSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub s0: Option<[f64; 2]>,
    pub f: Option<[f64; 2]>,
    pub d_star: Option<[f64; 2]>,
    pub d: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagesSection {
    pub global: Option<bool>,
    pub simplex: Option<bool>,
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub stages: StagesSection,
    pub normalize: Option<bool>,
    pub s0_window: Option<[f64; 2]>,
    pub split_b: Option<f64>,
    pub d_star_fixed: Option<f64>,
    pub shgo_samples: Option<usize>,
    pub shgo_iterations: Option<usize>,
    pub de_population: Option<usize>,
    pub de_generations: Option<usize>,
    pub de_tol: Option<f64>,
    pub trr_max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    #[default]
    Interleaved,
    Random,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub methods: Option<Vec<String>>,
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub cv: CvMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn scheme(&self) -> Result<AcquisitionScheme> {
        let b = self.bvalues.clone().unwrap_or_else(|| STANDARD_BVALUES.to_vec());
        AcquisitionScheme::new(b).context("field `bvalues`")
    }

    pub fn noise(&self, seed: u64) -> Result<NoiseSpec> {
        let n = &self.simulate.noise;
        let kind = match n.kind.as_deref().unwrap_or("none") {
            "none" => NoiseKind::None,
            "gaussian" => NoiseKind::Gaussian,
            "rician" => NoiseKind::Rician,
            other => bail!("field `simulate.noise.kind`: unknown noise kind `{other}` (expected none, gaussian or rician)"),
        };
        if kind != NoiseKind::None && n.snr.is_none() {
            bail!("field `simulate.noise.snr` is required for {kind:?} noise");
        }
        let spec = NoiseSpec {
            kind,
            snr: n.snr.unwrap_or(f64::INFINITY),
            seed,
        };
        spec.validate().context("field `simulate.noise.snr`")?;
        Ok(spec)
    }

    pub fn mask(&self) -> Result<Vec<bool>> {
        let n: usize = self.simulate.dims.iter().product();
        match &self.simulate.mask {
            MaskSpec::Keyword(k) if k == "all" => Ok(vec![true; n]),
            MaskSpec::Keyword(k) if k == "none" => Ok(vec![false; n]),
            MaskSpec::Keyword(k) => bail!("field `simulate.mask`: unknown keyword `{k}` (expected all, none or a 0/1 list)"),
            MaskSpec::Explicit(v) => {
                if v.len() != n {
                    bail!("field `simulate.mask`: {} entries for {n} voxels", v.len());
                }
                v.iter()
                    .map(|&m| match m {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => bail!("field `simulate.mask`: entries must be 0 or 1, got {m}"),
                    })
                    .collect()
            }
        }
    }

    pub fn methods(&self, cli: Option<Method>) -> Result<Vec<Method>> {
        if let Some(m) = cli {
            return Ok(vec![m]);
        }
        match &self.evaluate.methods {
            None => Ok(Method::ALL.to_vec()),
            Some(names) => names
                .iter()
                .map(|n| parse_method(n).context("field `evaluate.methods`"))
                .collect(),
        }
    }

    /// Method for `fit`: the command-line flag wins over the config.
    pub fn method(&self, cli: Option<Method>) -> Result<Method> {
        match (cli, &self.method) {
            (Some(m), _) => Ok(m),
            (None, Some(name)) => parse_method(name).context("field `method`"),
            (None, None) => Ok(Method::VarproSh),
        }
    }

    pub fn fit_config(&self, seed: u64) -> Result<FitConfig> {
        let d = FitConfig::default();
        let s = &self.fit;
        let range = |v: Option<[f64; 2]>, default: (f64, f64)| v.map_or(default, |[a, b]| (a, b));
        let bounds = ParamBounds {
            s0: range(s.bounds.s0, d.bounds.s0),
            f: range(s.bounds.f, d.bounds.f),
            d_star: range(s.bounds.d_star, d.bounds.d_star),
            d: range(s.bounds.d, d.bounds.d),
        };
        let cfg = FitConfig {
            optimizer: d.optimizer,
            shgo: ShgoConfig {
                n_samples: s.shgo_samples.unwrap_or(d.shgo.n_samples),
                iterations: s.shgo_iterations.unwrap_or(d.shgo.iterations),
                ..d.shgo
            },
            de: DeConfig {
                population: s.de_population.unwrap_or(d.de.population),
                max_generations: s.de_generations.unwrap_or(d.de.max_generations),
                tol: s.de_tol.unwrap_or(d.de.tol),
                ..d.de
            },
            trr: TrrConfig {
                max_iterations: s.trr_max_iterations.unwrap_or(d.trr.max_iterations),
                ..d.trr
            },
            bounds,
            s0_window: range(s.s0_window, d.s0_window),
            normalize: s.normalize.unwrap_or(d.normalize),
            seed,
            stages: StageToggles {
                global: s.stages.global.unwrap_or(true),
                simplex: s.stages.simplex.unwrap_or(true),
                refine: s.stages.refine.unwrap_or(true),
            },
            split_b: s.split_b.unwrap_or(d.split_b),
            d_star_fixed: s.d_star_fixed.unwrap_or(d.d_star_fixed),
        };
        cfg.validate().context("section `fit`")?;
        Ok(cfg)
    }
}

pub fn parse_method(name: &str) -> Result<Method> {
    Method::parse(name).with_context(|| {
        let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method `{name}` (expected one of {})", names.join(", "))
    })
}
