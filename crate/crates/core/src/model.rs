//! Two-compartment IVIM signal model.
//!
//! The measured signal at diffusion weighting `b` is
//!
//! ```text
//! S(b) = S0 * (f * exp(-b * D*) + (1 - f) * exp(-b * D))
//! ```
//!
//! where `f` is the perfusion fraction, `D*` the pseudo-diffusion coefficient of
//! the blood compartment and `D` the tissue diffusion coefficient. All
//! diffusivities are in mm²/s and b-values in s/mm².

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// The b-values of the standard 11-point protocol used throughout the tests
/// and the evaluation suite.
pub const STANDARD_BVALUES: [f64; 11] = [
    0.0, 10.0, 20.0, 40.0, 80.0, 160.0, 240.0, 400.0, 600.0, 800.0, 1000.0,
];

/// Ordered list of diffusion weightings defining a measurement protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScheme {
    bvalues: Vec<f64>,
}

impl AcquisitionScheme {
    /// Builds a full protocol. Requires non-negative, non-decreasing b-values,
    /// at least one `b = 0` and at least four distinct values.
    pub fn new(bvalues: Vec<f64>) -> Result<Self> {
        let scheme = Self::subset_unchecked(bvalues)?;
        if !scheme.bvalues.contains(&0.0) {
            return Err(Error::InvalidScheme(
                "at least one b-value must be 0".into(),
            ));
        }
        if scheme.distinct_count() < 4 {
            return Err(Error::InvalidScheme(format!(
                "need at least 4 distinct b-values, got {}",
                scheme.distinct_count()
            )));
        }
        Ok(scheme)
    }

    /// The 11-point protocol from [`STANDARD_BVALUES`].
    pub fn standard() -> Self {
        Self {
            bvalues: STANDARD_BVALUES.to_vec(),
        }
    }

    fn subset_unchecked(bvalues: Vec<f64>) -> Result<Self> {
        if bvalues.is_empty() {
            return Err(Error::InvalidScheme("no b-values".into()));
        }
        if let Some(b) = bvalues.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::InvalidScheme(format!(
                "b-values must be finite and >= 0, got {b}"
            )));
        }
        if bvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidScheme(
                "b-values must be sorted in non-decreasing order".into(),
            ));
        }
        Ok(Self { bvalues })
    }

    /// Restricts the scheme to the given indices (in increasing order).
    ///
    /// Sub-protocols such as cross-validation folds need not contain `b = 0`;
    /// fitters normalize by the signal at the smallest b-value instead.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&i) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidScheme(format!(
                "index {i} out of range for {} b-values",
                self.len()
            )));
        }
        Self::subset_unchecked(idx.iter().map(|&i| self.bvalues[i]).collect())
    }

    pub fn bvalues(&self) -> &[f64] {
        &self.bvalues
    }

    pub fn len(&self) -> usize {
        self.bvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvalues.is_empty()
    }

    pub fn distinct_count(&self) -> usize {
        1 + self.bvalues.windows(2).filter(|w| w[1] != w[0]).count()
    }

    /// Smallest b-value of the protocol (0 for full protocols).
    pub fn min_b(&self) -> f64 {
        self.bvalues[0]
    }

    /// Indices of the samples acquired at the smallest b-value.
    pub fn anchor_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let min = self.min_b();
        self.bvalues
            .iter()
            .enumerate()
            .filter(move |(_, &b)| b == min)
            .map(|(i, _)| i)
    }
}

/// The four IVIM parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvimParams {
    pub s0: f64,
    /// Perfusion fraction in `[0, 1]`.
    pub f: f64,
    /// Pseudo-diffusion coefficient, mm²/s.
    pub d_star: f64,
    /// Tissue diffusion coefficient, mm²/s.
    pub d: f64,
}

impl IvimParams {
    pub fn new(s0: f64, f: f64, d_star: f64, d: f64) -> Result<Self> {
        let p = Self { s0, f, d_star, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.s0, self.f, self.d_star, self.d];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter in {self:?}")));
        }
        if self.s0 <= 0.0 {
            return Err(Error::Domain(format!("s0 must be > 0, got {}", self.s0)));
        }
        if !(0.0..=1.0).contains(&self.f) {
            return Err(Error::Domain(format!("f must lie in [0, 1], got {}", self.f)));
        }
        if self.d <= 0.0 {
            return Err(Error::Domain(format!("d must be > 0, got {}", self.d)));
        }
        if self.d_star <= self.d {
            return Err(Error::Domain(format!(
                "d_star ({}) must exceed d ({})",
                self.d_star, self.d
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s0, self.f, self.d_star, self.d]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            s0: a[0],
            f: a[1],
            d_star: a[2],
            d: a[3],
        }
    }

    /// Model prediction without invariant checks. Used for scoring fits whose
    /// parameters came from a solver (e.g. a frozen `d_star` below `d`).
    pub fn predict(&self, bvalues: &[f64]) -> Vec<f64> {
        bvalues
            .iter()
            .map(|&b| signal_at(self.s0, self.f, self.d_star, self.d, b))
            .collect()
    }
}

#[inline]
pub(crate) fn signal_at(s0: f64, f: f64, d_star: f64, d: f64, b: f64) -> f64 {
    s0 * (f * (-b * d_star).exp() + (1.0 - f) * (-b * d).exp())
}

/// Box limits for the four parameters, each stored as `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub s0: (f64, f64),
    pub f: (f64, f64),
    pub d_star: (f64, f64),
    pub d: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            s0: (1e-9, 1e9),
            f: (0.0, 1.0),
            d_star: (3e-3, 1e-1),
            d: (1e-4, 2.9e-3),
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("s0", self.s0),
            ("f", self.f),
            ("d_star", self.d_star),
            ("d", self.d),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(Error::InvalidBounds(format!(
                    "{name}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if self.s0.0 < 0.0 {
            return Err(Error::InvalidBounds("s0 lower bound must be >= 0".into()));
        }
        if self.f.0 < 0.0 || self.f.1 > 1.0 {
            return Err(Error::InvalidBounds(format!(
                "f bounds must lie within [0, 1], got [{}, {}]",
                self.f.0, self.f.1
            )));
        }
        if self.d.0 <= 0.0 {
            return Err(Error::InvalidBounds("d lower bound must be > 0".into()));
        }
        if self.d_star.0 < self.d.1 {
            return Err(Error::InvalidBounds(format!(
                "d_star lower bound {} overlaps d upper bound {}",
                self.d_star.0, self.d.1
            )));
        }
        Ok(())
    }

    /// Lower limits in `[s0, f, d_star, d]` order.
    pub fn lower(&self) -> [f64; 4] {
        [self.s0.0, self.f.0, self.d_star.0, self.d.0]
    }

    /// Upper limits in `[s0, f, d_star, d]` order.
    pub fn upper(&self) -> [f64; 4] {
        [self.s0.1, self.f.1, self.d_star.1, self.d.1]
    }

    pub fn contains(&self, p: &IvimParams) -> bool {
        let (lo, hi, v) = (self.lower(), self.upper(), p.as_array());
        (0..4).all(|i| lo[i] <= v[i] && v[i] <= hi[i])
    }
}

/// One voxel's signal, aligned to its acquisition scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    signal: Vec<f64>,
    scheme: AcquisitionScheme,
}

impl DecayCurve {
    pub fn new(signal: Vec<f64>, scheme: AcquisitionScheme) -> Result<Self> {
        if signal.len() != scheme.len() {
            return Err(Error::LengthMismatch {
                expected: scheme.len(),
                got: signal.len(),
            });
        }
        if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSignal(i));
        }
        Ok(Self { signal, scheme })
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn scheme(&self) -> &AcquisitionScheme {
        &self.scheme
    }

    pub fn bvalues(&self) -> &[f64] {
        self.scheme.bvalues()
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Mean signal at the smallest b-value of the scheme.
    pub fn anchor_mean(&self) -> f64 {
        let (sum, n) = self
            .scheme
            .anchor_indices()
            .fold((0.0, 0usize), |(s, n), i| (s + self.signal[i], n + 1));
        sum / n as f64
    }

    /// Restriction of the curve to a subset of sample indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let scheme = self.scheme.subset(indices)?;
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let signal = idx.iter().map(|&i| self.signal[i]).collect();
        Self::new(signal, scheme)
    }

    /// Curve scaled by a constant.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.signal.iter().map(|v| v * k).collect(),
            self.scheme.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    Rician,
}

/// Noise model for simulation. `sigma = s0 / snr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            snr: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn gaussian(snr: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            snr,
            seed,
        }
    }

    pub fn rician(snr: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Rician,
            snr,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != NoiseKind::None && !(self.snr > 0.0) {
            return Err(Error::InvalidNoise(format!(
                "snr must be > 0, got {}",
                self.snr
            )));
        }
        Ok(())
    }
}

/// Noiseless model signal.
pub fn evaluate_signal(params: &IvimParams, scheme: &AcquisitionScheme) -> Result<DecayCurve> {
    evaluate_signal_with_blood(params, scheme, 0.0)
}

/// Noiseless model signal with the blood diffusivity added to the
/// pseudo-diffusion exponent. Fitting treats `d_star + d_blood` as one value.
pub fn evaluate_signal_with_blood(
    params: &IvimParams,
    scheme: &AcquisitionScheme,
    d_blood: f64,
) -> Result<DecayCurve> {
    params.validate()?;
    if !(d_blood >= 0.0 && d_blood.is_finite()) {
        return Err(Error::Domain(format!("d_blood must be >= 0, got {d_blood}")));
    }
    let d_star = params.d_star + d_blood;
    let signal = scheme
        .bvalues()
        .iter()
        .map(|&b| signal_at(params.s0, params.f, d_star, params.d, b))
        .collect();
    DecayCurve::new(signal, scheme.clone())
}

/// Analytic Jacobian, one `[dS/dS0, dS/df, dS/dD*, dS/dD]` row per b-value.
pub fn jacobian(params: &IvimParams, scheme: &AcquisitionScheme) -> Result<Vec<[f64; 4]>> {
    params.validate()?;
    Ok(jacobian_rows(params, scheme.bvalues()))
}

pub(crate) fn jacobian_rows(p: &IvimParams, bvalues: &[f64]) -> Vec<[f64; 4]> {
    bvalues
        .iter()
        .map(|&b| {
            let e_star = (-b * p.d_star).exp();
            let e = (-b * p.d).exp();
            [
                p.f * e_star + (1.0 - p.f) * e,
                p.s0 * (e_star - e),
                -b * p.s0 * p.f * e_star,
                -b * p.s0 * (1.0 - p.f) * e,
            ]
        })
        .collect()
}

/// Simulated measurement under the given noise model; deterministic per seed.
pub fn simulate(
    params: &IvimParams,
    scheme: &AcquisitionScheme,
    noise: &NoiseSpec,
) -> Result<DecayCurve> {
    simulate_with_blood(params, scheme, noise, 0.0)
}

pub fn simulate_with_blood(
    params: &IvimParams,
    scheme: &AcquisitionScheme,
    noise: &NoiseSpec,
    d_blood: f64,
) -> Result<DecayCurve> {
    noise.validate()?;
    let clean = evaluate_signal_with_blood(params, scheme, d_blood)?;
    if noise.kind == NoiseKind::None {
        return Ok(clean);
    }
    let sigma = params.s0 / noise.snr;
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidNoise(format!("sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let signal = clean
        .signal()
        .iter()
        .map(|&s| match noise.kind {
            NoiseKind::Gaussian => s + normal.sample(&mut rng),
            NoiseKind::Rician => {
                let re = s + normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                re.hypot(im)
            }
            NoiseKind::None => unreachable!(),
        })
        .collect();
    DecayCurve::new(signal, scheme.clone())
}
