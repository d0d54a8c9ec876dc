use rayon::prelude::*;

use super::{fit_with_method, FitConfig, FitResult, Method};
use crate::error::{Error, Result};
use crate::model::{AcquisitionScheme, DecayCurve};

/// Flag value stored for voxels outside the mask.
pub const FLAG_MASKED: u8 = 255;
/// Flag bit set when a voxel could not be fit at all.
pub const FLAG_FAILED: u8 = 8;

/// A 3-D grid of decay curves, stored voxel-major: the samples of voxel
/// `x + nx·(y + ny·z)` occupy `data[v·n_b .. (v+1)·n_b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    scheme: AcquisitionScheme,
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl VoxelVolume {
    pub fn new(dims: [usize; 3], scheme: AcquisitionScheme, data: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        let voxels = dims.iter().product::<usize>();
        if voxels == 0 {
            return Err(Error::ShapeMismatch(format!("empty volume dimensions {dims:?}")));
        }
        if data.len() != voxels * scheme.len() {
            return Err(Error::ShapeMismatch(format!(
                "volume {dims:?} with {} b-values needs {} samples, got {}",
                scheme.len(),
                voxels * scheme.len(),
                data.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != voxels {
                return Err(Error::ShapeMismatch(format!("mask has {} entries for {voxels} voxels", m.len())));
            }
        }
        Ok(Self {
            dims,
            scheme,
            data,
            mask,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn scheme(&self) -> &AcquisitionScheme {
        &self.scheme
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [v % nx, (v / nx) % ny, v / (nx * ny)]
    }

    pub fn is_masked_in(&self, v: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[v])
    }

    pub fn samples(&self, v: usize) -> &[f64] {
        let n = self.scheme.len();
        &self.data[v * n..(v + 1) * n]
    }

    pub fn curve(&self, v: usize) -> Result<DecayCurve> {
        DecayCurve::new(self.samples(v).to_vec(), self.scheme.clone())
    }
}

/// Per-voxel parameter maps in the voxel order of the source volume.
/// Masked-out and failed voxels hold `NaN`; their flags are [`FLAG_MASKED`]
/// and [`FLAG_FAILED`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMaps {
    pub dims: [usize; 3],
    pub s0: Vec<f64>,
    pub f: Vec<f64>,
    pub d_star: Vec<f64>,
    pub d: Vec<f64>,
    pub flags: Vec<u8>,
    pub results: Vec<Option<FitResult>>,
}

impl ParameterMaps {
    /// Equality ignoring wall-clock timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let bits = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        self.dims == other.dims
            && bits(&self.s0, &other.s0)
            && bits(&self.f, &other.f)
            && bits(&self.d_star, &other.d_star)
            && bits(&self.d, &other.d)
            && self.flags == other.flags
            && self.results.len() == other.results.len()
            && self.results.iter().zip(&other.results).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.same_outcome(b),
                (None, None) => true,
                _ => false,
            })
    }

    /// Total evaluations over all fitted voxels.
    pub fn evaluations(&self) -> usize {
        self.results.iter().flatten().map(FitResult::evaluations).sum()
    }
}

/// Seed of voxel `index`, derived from the run seed with a splitmix64 mix.
pub fn voxel_seed(base: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index as u64))
}

/// Fits every masked-in voxel on `workers` threads. Results do not depend on
/// the worker count.
pub fn fit_volume(volume: &VoxelVolume, method: Method, cfg: &FitConfig, workers: usize) -> Result<ParameterMaps> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let fits: Vec<Option<Result<FitResult>>> = pool.install(|| {
        (0..volume.voxel_count())
            .into_par_iter()
            .map(|v| {
                if !volume.is_masked_in(v) {
                    return None;
                }
                let voxel_cfg = FitConfig {
                    seed: voxel_seed(cfg.seed, v),
                    ..*cfg
                };
                Some(volume.curve(v).and_then(|c| fit_with_method(&c, method, &voxel_cfg)))
            })
            .collect()
    });

    let n = fits.len();
    let mut maps = ParameterMaps {
        dims: volume.dims(),
        s0: vec![f64::NAN; n],
        f: vec![f64::NAN; n],
        d_star: vec![f64::NAN; n],
        d: vec![f64::NAN; n],
        flags: vec![FLAG_MASKED; n],
        results: Vec::with_capacity(n),
    };
    for (v, fit) in fits.into_iter().enumerate() {
        match fit {
            None => maps.results.push(None),
            Some(Ok(r)) => {
                maps.s0[v] = r.params.s0;
                maps.f[v] = r.params.f;
                maps.d_star[v] = r.params.d_star;
                maps.d[v] = r.params.d;
                maps.flags[v] = r.flags.bits();
                maps.results.push(Some(r));
            }
            Some(Err(_)) => {
                maps.flags[v] = FLAG_FAILED;
                maps.results.push(None);
            }
        }
    }
    Ok(maps)
}
