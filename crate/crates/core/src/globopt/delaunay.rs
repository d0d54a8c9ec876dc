//! Bowyer–Watson Delaunay triangulation in the plane.

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Triangles over an input point slice. Indices refer to the caller's slice;
/// exact duplicate points after the first occurrence are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Number of input points (including dropped duplicates).
    pub n_points: usize,
}

impl Triangulation {
    /// Sorted, de-duplicated neighbor lists for every input index.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_points];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

#[inline]
pub(crate) fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `(a, b, c)`.
#[inline]
pub(crate) fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Circumcenter and radius of a non-degenerate triangle.
pub fn circumcircle(a: Point2, b: Point2, c: Point2) -> (Point2, f64) {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    let r = ((a[0] - ux).powi(2) + (a[1] - uy).powi(2)).sqrt();
    ([ux, uy], r)
}

/// Indices of the first occurrence of every distinct point, in input order.
fn unique_indices(points: &[Point2]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
            .then(i.cmp(&j))
    });
    let mut keep = Vec::with_capacity(points.len());
    for (k, &i) in order.iter().enumerate() {
        if k == 0 || points[order[k - 1]] != points[i] {
            keep.push(i);
        }
    }
    keep.sort_unstable();
    keep
}

/// Delaunay triangulation by incremental Bowyer–Watson insertion into a
/// bounding super-triangle.
///
/// Fails with [`Error::DegenerateInput`] when fewer than three distinct points
/// remain or all of them are collinear.
pub fn triangulate(points: &[Point2]) -> Result<Triangulation> {
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::DegenerateInput("non-finite coordinate".into()));
    }
    let unique = unique_indices(points);
    if unique.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "{} distinct points; need at least 3",
            unique.len()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &i in &unique {
        for k in 0..2 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let p0 = points[unique[0]];
    let far = *unique
        .iter()
        .max_by(|&&i, &&j| {
            let di = (points[i][0] - p0[0]).hypot(points[i][1] - p0[1]);
            let dj = (points[j][0] - p0[0]).hypot(points[j][1] - p0[1]);
            di.total_cmp(&dj)
        })
        .unwrap();
    let p1 = points[far];
    let spread = unique
        .iter()
        .map(|&i| orient(p0, p1, points[i]).abs())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * scale * scale {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }

    let n = points.len();
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let m = 20.0 * scale;
    let mut verts: Vec<Point2> = points.to_vec();
    verts.push([center[0] - 2.0 * m, center[1] - m]);
    verts.push([center[0] + 2.0 * m, center[1] - m]);
    verts.push([center[0], center[1] + 2.0 * m]);
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

    for &pi in &unique {
        let p = verts[pi];
        let bad: Vec<bool> = tris
            .iter()
            .map(|t| incircle(verts[t[0]], verts[t[1]], verts[t[2]], p) > 0.0)
            .collect();
        // Seed the cavity with every triangle that contains p, then grow it
        // through shared edges so it stays connected.
        let mut in_cavity: Vec<bool> = tris
            .iter()
            .map(|t| (0..3).all(|k| orient(verts[t[k]], verts[t[(k + 1) % 3]], p) >= 0.0))
            .collect();
        if !in_cavity.iter().any(|&c| c) {
            // Numerical corner case: fall back to all triangles whose circle holds p.
            in_cavity.clone_from(&bad);
        }
        let mut frontier: Vec<usize> = (0..tris.len()).filter(|&i| in_cavity[i]).collect();
        while let Some(ti) = frontier.pop() {
            let t = tris[ti];
            for (tj, u) in tris.iter().enumerate() {
                if in_cavity[tj] || !bad[tj] {
                    continue;
                }
                let shares = (0..3).any(|k| {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    (0..3).any(|l| u[l] == b && u[(l + 1) % 3] == a)
                });
                if shares {
                    in_cavity[tj] = true;
                    frontier.push(tj);
                }
            }
        }
        let cavity: Vec<[usize; 3]> = tris
            .iter()
            .zip(&in_cavity)
            .filter(|(_, &c)| c)
            .map(|(t, _)| *t)
            .collect();
        let mut boundary = Vec::new();
        for t in &cavity {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let shared = cavity
                    .iter()
                    .any(|u| (0..3).any(|l| u[l] == b && u[(l + 1) % 3] == a));
                if !shared {
                    boundary.push((a, b));
                }
            }
        }
        tris = tris
            .into_iter()
            .zip(in_cavity)
            .filter(|(_, c)| !c)
            .map(|(t, _)| t)
            .collect();
        tris.extend(boundary.into_iter().map(|(a, b)| [a, b, pi]));
    }

    tris.retain(|t| t.iter().all(|&v| v < n));
    if tris.is_empty() {
        return Err(Error::DegenerateInput("no interior triangles".into()));
    }
    Ok(Triangulation {
        triangles: tris,
        n_points: n,
    })
}
