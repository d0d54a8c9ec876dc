use crate::error::{Error, Result};

const BITS: u32 = 32;
const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;

/// Primitive-polynomial data for dimensions 2..=6 (Joe & Kuo):
/// (degree, polynomial coefficients, initial direction numbers m_k).
const POLYS: [(u32, u32, &[u32]); 5] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
];

pub const MAX_SOBOL_DIM: usize = 6;

fn direction_numbers(dim: usize) -> Vec<[u32; BITS as usize]> {
    let mut out = Vec::with_capacity(dim);
    // First coordinate: van der Corput, v_k = 2^(32-k).
    let mut first = [0u32; BITS as usize];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1u32 << (BITS as usize - 1 - k);
    }
    out.push(first);
    for &(s, a, m_init) in POLYS.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS as usize];
        for k in 0..s.min(BITS as usize) {
            v[k] = m_init[k] << (BITS as usize - 1 - k);
        }
        for k in s..BITS as usize {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for j in 1..s {
                if (a >> (s - 1 - j)) & 1 == 1 {
                    x ^= v[k - j];
                }
            }
            v[k] = x;
        }
        out.push(v);
    }
    out
}

/// Unscrambled base-2 Sobol points in `[0, 1)^dim`, Gray-code ordered.
///
/// Index 0 is the origin; `skip` drops that many leading points.
pub fn sobol_points(dim: usize, n: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_SOBOL_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("sobol_points needs n >= 1".into()));
    }
    let v = direction_numbers(dim);
    let mut state = vec![0u32; dim];
    let mut out = Vec::with_capacity(n);
    let total = skip + n;
    for index in 0..total {
        if index > 0 {
            // Gray-code update: flip the direction of the lowest zero bit of index-1.
            let c = (index - 1).trailing_ones() as usize;
            if c >= BITS as usize {
                return Err(Error::InvalidConfig("Sobol sequence exhausted".into()));
            }
            for (d, s) in state.iter_mut().enumerate() {
                *s ^= v[d][c];
            }
        }
        if index >= skip {
            out.push(state.iter().map(|&s| s as f64 * SCALE).collect());
        }
    }
    Ok(out)
}
