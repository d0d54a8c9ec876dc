use std::cmp::Ordering;

use super::delaunay::{triangulate, Point2};
use crate::error::Error;

/// Sampled vertices with cached objective values, connected by a Delaunay
/// triangulation (or a sorted chain when the samples are collinear).
///
/// Edges are oriented from the larger to the smaller objective value; ties are
/// broken by lexicographic point order, so the orientation is a strict total
/// order and the directed graph cannot contain a cycle.
#[derive(Debug, Clone)]
pub struct SimplicialComplex {
    pub points: Vec<Point2>,
    pub values: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
}

/// Vertices that are local sinks of the directed graph, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimizerPool {
    pub vertices: Vec<usize>,
}

impl MinimizerPool {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

impl SimplicialComplex {
    pub fn build(points: Vec<Point2>, values: Vec<f64>) -> Self {
        assert_eq!(points.len(), values.len(), "one value per vertex");
        match triangulate(&points) {
            Ok(t) => {
                let neighbors = t.neighbors();
                Self {
                    points,
                    values,
                    triangles: t.triangles,
                    neighbors,
                }
            }
            Err(Error::DegenerateInput(_)) => {
                let neighbors = chain_neighbors(&points);
                Self {
                    points,
                    values,
                    triangles: Vec::new(),
                    neighbors,
                }
            }
            Err(e) => unreachable!("triangulate only reports degenerate input: {e}"),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Strict total order on vertices: objective value, then point.
    pub fn order(&self, i: usize, j: usize) -> Ordering {
        self.values[i]
            .total_cmp(&self.values[j])
            .then(self.points[i][0].total_cmp(&self.points[j][0]))
            .then(self.points[i][1].total_cmp(&self.points[j][1]))
            .then(i.cmp(&j))
    }

    /// Directed edges `u → v` with `v` preceding `u` in [`Self::order`].
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (u, adj) in self.neighbors.iter().enumerate() {
            for &v in adj {
                if u < v {
                    if self.order(u, v) == Ordering::Greater {
                        edges.push((u, v));
                    } else {
                        edges.push((v, u));
                    }
                }
            }
        }
        edges
    }

    /// Kahn's algorithm over the directed edges; `true` when every vertex can
    /// be ordered.
    pub fn is_acyclic(&self) -> bool {
        let n = self.len();
        let edges = self.directed_edges();
        let mut indeg = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for &(u, v) in &edges {
            indeg[v] += 1;
            out[u].push(v);
        }
        let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = stack.pop() {
            seen += 1;
            for &v in &out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
        seen == n
    }
}

/// Consecutive neighbors along the lexicographically sorted points, used
/// when no triangulation exists. Duplicate points stay isolated.
fn chain_neighbors(points: &[Point2]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
            .then(i.cmp(&j))
    });
    order.dedup_by(|a, b| points[*a] == points[*b]);
    let mut adj = vec![Vec::new(); points.len()];
    for w in order.windows(2) {
        adj[w[0]].push(w[1]);
        adj[w[1]].push(w[0]);
    }
    adj
}

/// Vertices whose value precedes every neighbor's (all incident edges point
/// inward). Sorted best first. Vertices without neighbors (dropped
/// duplicates) are skipped unless nothing else exists.
pub fn extract_pool(complex: &SimplicialComplex) -> MinimizerPool {
    let connected = (0..complex.len()).any(|i| !complex.neighbors(i).is_empty());
    let mut vertices: Vec<usize> = (0..complex.len())
        .filter(|&i| {
            let adj = complex.neighbors(i);
            if adj.is_empty() {
                return !connected;
            }
            adj.iter().all(|&j| complex.order(i, j) == Ordering::Less)
        })
        .collect();
    vertices.sort_by(|&i, &j| complex.order(i, j));
    if !connected && vertices.len() > 1 {
        vertices.truncate(1);
    }
    MinimizerPool { vertices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::globopt::sobol_points;

    fn grid(n: usize) -> Vec<Point2> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64]);
            }
        }
        pts
    }

    #[test]
    fn convex_quadratic_has_single_sink() {
        let pts = grid(9);
        let c = [0.41, 0.67];
        let vals = pts
            .iter()
            .map(|p| (p[0] - c[0]).powi(2) + 2.0 * (p[1] - c[1]).powi(2))
            .collect();
        let cx = SimplicialComplex::build(pts.clone(), vals);
        let pool = extract_pool(&cx);
        assert_eq!(pool.len(), 1);
        let nearest = (0..pts.len())
            .min_by(|&i, &j| {
                let di = (pts[i][0] - c[0]).powi(2) + 2.0 * (pts[i][1] - c[1]).powi(2);
                let dj = (pts[j][0] - c[0]).powi(2) + 2.0 * (pts[j][1] - c[1]).powi(2);
                di.total_cmp(&dj)
            })
            .unwrap();
        assert_eq!(pool.vertices[0], nearest);
        assert!(cx.is_acyclic());
    }

    #[test]
    fn constant_objective_keeps_lexicographic_smallest() {
        let pts: Vec<Point2> = sobol_points(2, 32, 1)
            .unwrap()
            .into_iter()
            .map(|p| [p[0], p[1]])
            .collect();
        let cx = SimplicialComplex::build(pts.clone(), vec![3.0; 32]);
        let pool = extract_pool(&cx);
        let smallest = (0..32)
            .min_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]).then(pts[i][1].total_cmp(&pts[j][1])))
            .unwrap();
        assert_eq!(pool.vertices, vec![smallest]);
    }

    #[test]
    fn collinear_samples_use_chain() {
        let pts: Vec<Point2> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let vals = vec![5.0, 3.0, 4.0, 1.0, 2.0, 6.0];
        let cx = SimplicialComplex::build(pts, vals);
        assert!(cx.triangles.is_empty());
        assert_eq!(extract_pool(&cx).vertices, vec![3, 1]);
        assert!(cx.is_acyclic());
    }

    #[test]
    fn every_triangulation_edge_has_one_orientation() {
        let pts: Vec<Point2> = sobol_points(2, 50, 0)
            .unwrap()
            .into_iter()
            .map(|p| [p[0], p[1]])
            .collect();
        let vals: Vec<f64> = pts.iter().map(|p| (7.0 * p[0]).sin() * (5.0 * p[1]).cos()).collect();
        let cx = SimplicialComplex::build(pts, vals);
        let directed = cx.directed_edges();
        let mut undirected: Vec<(usize, usize)> = directed.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        undirected.sort_unstable();
        let n = undirected.len();
        undirected.dedup();
        assert_eq!(n, undirected.len());
        assert!(directed.iter().all(|&(u, v)| cx.order(u, v) == Ordering::Greater));
        assert!(cx.is_acyclic());
    }
}
