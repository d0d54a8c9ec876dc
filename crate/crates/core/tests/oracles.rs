//! Checks against independent references: frozen numpy/scipy values, brute
//! force grids and scans.

use ivimfit::globopt::{circumcircle, de_minimize, shgo_minimize, triangulate, DeConfig, ObjectiveHandle, ShgoConfig};
use ivimfit::lsq::{bqn_minimize, solve_simplex_ls, trr_minimize, BoxBounds, SimplexLsProblem, TrrConfig};
use ivimfit::model::{AcquisitionScheme, DecayCurve};
use ivimfit::varpro::{build_dictionary, project_linear, reduced_objective, NonlinearParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIGNAL: [f64; 11] = [1.02, 0.95, 0.93, 0.90, 0.86, 0.80, 0.74, 0.66, 0.55, 0.47, 0.40];

fn measured() -> DecayCurve {
    DecayCurve::new(SIGNAL.to_vec(), AcquisitionScheme::standard()).unwrap()
}

// (d, d_star, c1, c2, reduced objective, simplex f, simplex objective) from numpy.linalg.lstsq.
const LSTSQ: [(f64, f64, f64, f64, f64, f64, f64); 3] = [
    (0.001, 0.02, 0.02121717284200544, 0.955497058221486, 0.009345710215782465, 0.04995601087094297, 0.010530655458179503),
    (0.0005, 0.01, 0.23063127987257118, 0.7682903670287224, 0.012616409352007047, 0.23198105721418458, 0.012619856716980266),
    (0.002, 0.05, -0.17719809040159565, 1.1230727416504689, 0.22783407281283144, 0.0, 0.27121696069079104),
];

#[test]
fn projection_matches_numpy_lstsq() {
    let s = measured();
    for (d, ds, c1, c2, obj, _, _) in LSTSQ {
        let x = NonlinearParams::unbounded(d, ds);
        let c = project_linear(&x, &s).unwrap();
        assert!((c.c1 - c1).abs() < 1e-10 && (c.c2 - c2).abs() < 1e-10, "{c:?}");
        assert!((reduced_objective(&x, &s).unwrap() - obj).abs() < 1e-12);
    }
}

#[test]
fn simplex_matches_numpy_and_scan() {
    let s = measured();
    for (d, ds, _, _, _, f, obj) in LSTSQ {
        let dict = build_dictionary(&NonlinearParams::unbounded(d, ds), s.scheme()).unwrap();
        let p = SimplexLsProblem::from_dictionary(&dict, s.signal()).unwrap();
        let sol = solve_simplex_ls(&p);
        assert!((sol.f1 - f).abs() < 1e-12);
        assert!((p.objective(sol.f1) - obj).abs() < 1e-12);

        let n = 1_000_000;
        let (best_f, best_obj) = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                (t, p.objective(t))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((sol.f1 - best_f).abs() <= 1e-6, "{} vs scan {best_f}", sol.f1);
        assert!(p.objective(sol.f1) <= best_obj + 1e-15);
    }
}

#[test]
fn reduced_objective_matches_coefficient_grid() {
    let s = measured();
    for (d, ds, c1, c2, _, _, _) in LSTSQ {
        let x = NonlinearParams::unbounded(d, ds);
        let dict = build_dictionary(&x, s.scheme()).unwrap();
        let reduced = reduced_objective(&x, &s).unwrap();
        // 200 × 200 grid centered on the optimum, half-width 0.5 in each coefficient.
        let n = 200;
        let h = 1.0 / (n - 1) as f64;
        let mut grid_min = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let a = c1 - 0.5 + i as f64 * h;
                let b = c2 - 0.5 + j as f64 * h;
                let r: f64 = (0..s.len())
                    .map(|k| (a * dict.matrix()[(k, 0)] + b * dict.matrix()[(k, 1)] - SIGNAL[k]).powi(2))
                    .sum();
                grid_min = grid_min.min(r);
            }
        }
        // The objective is a quadratic; half a cell away from the optimum costs
        // at most λ_max · (h/2)² · 2.
        let gram = dict.matrix().transpose() * dict.matrix();
        let lambda_max = gram.symmetric_eigenvalues().max();
        assert!(reduced <= grid_min + 1e-15);
        assert!(grid_min - reduced <= 2.0 * lambda_max * (h / 2.0).powi(2), "{grid_min} vs {reduced}");
    }
}

#[test]
fn delaunay_has_empty_circumcircles() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for set in 0..50 {
        let n = 10 + set * 3;
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let tri = triangulate(&pts).unwrap();
        for t in &tri.triangles {
            let (c, r) = circumcircle(pts[t[0]], pts[t[1]], pts[t[2]]);
            for (k, p) in pts.iter().enumerate() {
                if t.contains(&k) {
                    continue;
                }
                let dist = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                assert!(dist >= r * (1.0 - 1e-9), "set {set}: point {k} inside circumcircle of {t:?}");
            }
        }
    }
}

fn himmelblau(x: &[f64]) -> f64 {
    (x[0] * x[0] + x[1] - 11.0).powi(2) + (x[0] + x[1] * x[1] - 7.0).powi(2)
}

/// Local minima of a 1000 × 1000 grid scan over [-5, 5]²: cells lower than
/// all eight neighbours.
fn grid_minima() -> Vec<[f64; 2]> {
    let n = 1000;
    let h = 10.0 / (n - 1) as f64;
    let at = |i: usize, j: usize| himmelblau(&[-5.0 + i as f64 * h, -5.0 + j as f64 * h]);
    let mut out = Vec::new();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = at(i, j);
            let lowest = (-1i32..=1)
                .flat_map(|di| (-1i32..=1).map(move |dj| (di, dj)))
                .filter(|&d| d != (0, 0))
                .all(|(di, dj)| v < at((i as i32 + di) as usize, (j as i32 + dj) as usize));
            if lowest {
                out.push([-5.0 + i as f64 * h, -5.0 + j as f64 * h]);
            }
        }
    }
    out
}

// scipy.optimize.minimize (BFGS) from each grid minimum.
const HIMMELBLAU_MINIMA: [[f64; 2]; 4] = [
    [3.0, 2.0],
    [-2.805118094255692, 3.1313125109184394],
    [-3.7793102639198293, -3.2831860010764564],
    [3.5844283332831157, -1.8481265327069945],
];

#[test]
fn grid_scan_locates_the_four_minima() {
    let grid = grid_minima();
    assert_eq!(grid.len(), 4, "{grid:?}");
    for m in HIMMELBLAU_MINIMA {
        assert!(grid.iter().any(|g| (g[0] - m[0]).abs() < 0.011 && (g[1] - m[1]).abs() < 0.011));
    }
}

#[test]
fn shgo_finds_every_himmelblau_minimum() {
    let bounds = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
    let obj = ObjectiveHandle::new(himmelblau, bounds);
    let r = shgo_minimize(&obj, &ShgoConfig::default()).unwrap();
    for m in HIMMELBLAU_MINIMA {
        let found = r
            .local_minima
            .iter()
            .any(|lm| (lm.point[0] - m[0]).abs() < 1e-5 && (lm.point[1] - m[1]).abs() < 1e-5);
        assert!(found, "missing {m:?} in {:?}", r.local_minima);
    }
    assert!(r.value < 1e-10);
}

#[test]
fn de_runs_cover_every_himmelblau_minimum() {
    let bounds = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
    let mut hit = [false; 4];
    for seed in 0..40 {
        let obj = ObjectiveHandle::new(himmelblau, bounds.clone());
        let r = de_minimize(&obj, &DeConfig { seed, ..DeConfig::default() }).unwrap();
        let k = HIMMELBLAU_MINIMA
            .iter()
            .position(|m| (r.point[0] - m[0]).abs() < 1e-5 && (r.point[1] - m[1]).abs() < 1e-5);
        let k = k.unwrap_or_else(|| panic!("seed {seed} ended off every minimum: {:?}", r.point));
        hit[k] = true;
    }
    assert!(hit.iter().all(|&h| h), "{hit:?}");
}

#[test]
fn trr_and_bqn_agree_on_bounded_least_squares() {
    let t: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
    let y: Vec<f64> = t.iter().map(|&ti| 2.0 * (-0.7 * ti).exp() + 0.3 + 0.01 * (5.0 * ti).sin()).collect();
    let residual = |x: &[f64]| -> Vec<f64> { t.iter().zip(&y).map(|(&ti, yi)| x[0] * (-x[1] * ti).exp() + x[2] - yi).collect() };
    let jacobian = |x: &[f64]| DMatrix::from_fn(t.len(), 3, |r, c| match c {
        0 => (-x[1] * t[r]).exp(),
        1 => -x[0] * t[r] * (-x[1] * t[r]).exp(),
        _ => 1.0,
    });
    let bounds = BoxBounds::new(vec![0.0, 0.0, 0.25], vec![5.0, 3.0, 1.0]).unwrap();
    let x0 = [1.0, 1.0, 0.5];
    let a = trr_minimize(residual, jacobian, &x0, &bounds, &TrrConfig::default()).unwrap();
    let b = bqn_minimize(|x: &[f64]| residual(x).iter().map(|r| r * r).sum(), &x0, &bounds).unwrap();
    for i in 0..3 {
        assert!((a.point[i] - b.point[i]).abs() < 1e-5, "{:?} vs {:?}", a.point, b.point);
    }
    assert!((a.value - b.value).abs() < 1e-10);
}

#[test]
fn evaluation_counter_is_exact() {
    use std::cell::Cell;
    let calls = Cell::new(0usize);
    let bounds = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let obj = ObjectiveHandle::new(
        |x: &[f64]| {
            calls.set(calls.get() + 1);
            (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)
        },
        bounds.clone(),
    );
    let r = shgo_minimize(&obj, &ShgoConfig::default()).unwrap();
    assert_eq!(r.evaluations, calls.get());
    calls.set(0);
    let obj = ObjectiveHandle::new(
        |x: &[f64]| {
            calls.set(calls.get() + 1);
            (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)
        },
        bounds,
    );
    let r = de_minimize(&obj, &DeConfig::default()).unwrap();
    assert_eq!(r.evaluations, calls.get());
}
