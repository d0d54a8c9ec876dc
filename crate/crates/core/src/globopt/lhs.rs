use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Latin hypercube sample of `n` points in `[0, 1)^dim`: along every axis each
/// stratum `[k/n, (k+1)/n)` holds exactly one point, jittered uniformly.
pub fn latin_hypercube(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube_with(dim, n, &mut rng)
}

pub(crate) fn latin_hypercube_with<R: Rng>(dim: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    let width = 1.0 / n as f64;
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, &k) in pts.iter_mut().zip(&strata) {
            let lo = k as f64 * width;
            let hi = (k + 1) as f64 * width;
            let v = lo + rng.random::<f64>() * width;
            p[d] = if v >= hi { hi.next_down() } else { v.max(lo) };
        }
    }
    pts
}
