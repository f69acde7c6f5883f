//! k-nearest-neighbour graphs and all-pairs shortest paths.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::prelude::*;

/// Symmetric matrix of manifold distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    d: Matrix,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal and non-negativity.
    pub fn new(d: Matrix) -> Result<Self> {
        let n = d.rows();
        if d.cols() != n {
            return Err(Error::shape("distance matrix must be square"));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::contract(format!("d[{i}][{i}] must be 0")));
            }
            for j in 0..i {
                let (a, b) = (d[(i, j)], d[(j, i)]);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::contract(format!("d[{i}][{j}] must be finite and >= 0")));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::contract(format!("d is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { d })
    }

    /// Pairwise Euclidean distances between rows.
    pub fn euclidean(points: &Matrix) -> Self {
        let n = points.rows();
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = linalg::dist(points.row(i), points.row(j));
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        DistanceMatrix { d }
    }

    pub fn len(&self) -> usize {
        self.d.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.d
    }

    pub fn into_matrix(self) -> Matrix {
        self.d
    }

    /// Sub-block for the given indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> DistanceMatrix {
        let k = idx.len();
        let mut d = Matrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                d[(a, b)] = self.d[(i, j)];
            }
        }
        DistanceMatrix { d }
    }

    /// Upper-triangle entries, row by row.
    pub fn pair_vector(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.d[(i, j)]);
            }
        }
        out
    }
}

/// Symmetrized k-NN adjacency lists with Euclidean edge weights.
pub fn knn_graph(points: &Matrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = points.rows();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                cand.push((linalg::sq_dist(points.row(i), points.row(j)), j));
            }
        }
        let kk = k.min(cand.len());
        if kk == 0 {
            continue;
        }
        cand.select_nth_unstable_by(kk - 1, |a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(d2, j) in &cand[..kk] {
            let w = d2.sqrt();
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    for list in &mut adj {
        list.sort_by_key(|e| e.0);
        list.dedup_by_key(|e| e.0);
    }
    adj
}

fn component_sizes(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then(other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize, dist: &mut [f64]) {
    dist.iter_mut().for_each(|d| *d = f64::INFINITY);
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, src));
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(w, len) in &adj[v] {
            let nd = d + len;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Entry(nd, w));
            }
        }
    }
}

/// Shortest-path distances on the symmetrized k-NN graph.
pub fn graph_distances(cloud: &PointCloud, k: usize) -> Result<DistanceMatrix> {
    if k < 2 {
        return Err(Error::contract("k must be at least 2"));
    }
    let n = cloud.len();
    let adj = knn_graph(&cloud.points, k);
    let sizes = component_sizes(&adj);
    if sizes.len() > 1 {
        return Err(Error::Disconnected { sizes });
    }
    let mut d = Matrix::zeros(n, n);
    let mut row = vec![0.0; n];
    for s in 0..n {
        dijkstra(&adj, s, &mut row);
        d.row_mut(s).copy_from_slice(&row);
    }
    // Dijkstra sums edges in different orders from each end; average away
    // the last-ulp asymmetry.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (d[(i, j)] + d[(j, i)]);
            d[(i, j)] = m;
            d[(j, i)] = m;
        }
    }
    Ok(DistanceMatrix { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{analytic_geodesic_length, sample_manifold, ManifoldKind, Sampler};
    use core::f64::consts::PI;

    fn cloud(rows: &[[f64; 2]]) -> PointCloud {
        PointCloud::from_points(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn collinear_path_goes_through_middle() {
        let d = graph_distances(&cloud(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), 2).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
    }

    #[test]
    fn equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let d = graph_distances(&cloud(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]), 2).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((d.get(i, j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_antipodes() {
        let n = 100;
        let pts: Vec<[f64; 2]> =
            (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).map(|a| [a.cos(), a.sin()]).collect();
        let d = graph_distances(&cloud(&pts), 4).unwrap();
        assert!((d.get(0, 50) - PI).abs() < 0.02 * PI);
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [10.0, 0.0], [10.1, 0.0], [10.2, 0.0], [10.3, 0.0]];
        match graph_distances(&cloud(&pts), 2) {
            Err(Error::Disconnected { sizes }) => assert_eq!(sizes, vec![4, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn graph_distances_are_a_metric() {
        let pc = sample_manifold(ManifoldKind::Saddle, 120, &Sampler::imbalanced(), 8).unwrap();
        let d = graph_distances(&pc, 6).unwrap();
        DistanceMatrix::new(d.as_matrix().clone()).unwrap();
        let n = d.len();
        for i in 0..n {
            for j in 0..n {
                for k in (0..n).step_by(7) {
                    assert!(d.get(i, j) <= d.get(i, k) + d.get(k, j) + 1e-9);
                }
            }
        }
    }

    fn hemisphere_errors(k: usize) -> Vec<f64> {
        let sampler = Sampler::AreaUniform { bounds: ManifoldKind::Hemisphere.default_bounds() };
        let pc = sample_manifold(ManifoldKind::Hemisphere, 2000, &sampler, 12).unwrap();
        let d = graph_distances(&pc, k).unwrap();
        (0..20)
            .map(|p| (p * 37 % 2000, (p * 911 + 500) % 2000))
            .map(|(i, j)| {
                let exact =
                    analytic_geodesic_length(ManifoldKind::Hemisphere, pc.point(i), pc.point(j)).unwrap().unwrap();
                (d.get(i, j) - exact).abs() / exact
            })
            .collect()
    }

    // Graph paths zig-zag, so at k = 10 a sizeable share of pairs sits just
    // above 5% stretch; the per-pair bound needs a denser graph.
    #[test]
    fn hemisphere_graph_approaches_great_circles() {
        let coarse = hemisphere_errors(10);
        assert!(coarse.iter().sum::<f64>() / 20.0 < 0.05, "{coarse:?}");
        let fine = hemisphere_errors(20);
        assert!(fine.iter().all(|e| *e < 0.05), "{fine:?}");
    }
}
