//! Structured graphs built from embedding matrices.
//!
//! A [`StructuredGraph`] carries node features, an undirected k-NN edge set,
//! unit node weights, and a hop-count structure matrix. Two graphs are
//! compared through an [`AffinityPair`]: a vertex affinity matrix of feature
//! distances and a dense edge affinity tensor of structure-distance gaps.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array2, Array4, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbor count used when none is given.
pub const DEFAULT_K: usize = 5;

/// Feature distance `d_f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `1 - cos(x, y)`, clamped to `[0, 2]`.
    #[default]
    Cosine,
    /// `||x - y||_2`.
    Euclidean,
}

impl Metric {
    /// Distance between two feature vectors. `rows` names the vectors in the
    /// error raised for a zero-norm input under cosine.
    pub fn distance(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, rows: (usize, usize)) -> Result<f64> {
        match self {
            Metric::Euclidean => Ok(euclidean(a, b)),
            Metric::Cosine => {
                let (aa, bb) = (a.dot(&a), b.dot(&b));
                if aa == 0.0 {
                    return Err(Error::DegenerateVector { row: rows.0 });
                }
                if bb == 0.0 {
                    return Err(Error::DegenerateVector { row: rows.1 });
                }
                // sqrt(aa * aa) == aa exactly, so equal vectors give exactly 0.
                let prod = aa * bb;
                let denom = if prod.is_finite() && prod > 0.0 { prod.sqrt() } else { aa.sqrt() * bb.sqrt() };
                Ok((1.0 - a.dot(&b) / denom).clamp(0.0, 2.0))
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::InvalidParameter(format!("unknown metric '{other}'"))),
        }
    }
}

fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A finite, non-empty, row-major matrix of embeddings (one row per item).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        Ok(Self(values))
    }

    pub fn from_flat(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::shape(format!("expected {rows}x{dim}={} values, got {}", rows * dim, values.len())));
        }
        let arr = Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(arr)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput)?;
        let dim = first.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::shape(format!("row {bad} has dimension {} but row 0 has {dim}", rows[bad].len())));
        }
        Self::from_flat(rows.len(), dim, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Row-major copy of the values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.outer_iter().map(|r| r.to_vec()).collect()
    }
}

/// Coordinate-wise arithmetic mean of a non-empty list of equal-length vectors.
pub fn pool_embeddings(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::shape(format!("row {r} has dimension {} but row 0 has {dim}", row.len())));
        }
        for (a, v) in acc.iter_mut().zip(row) {
            if !v.is_finite() {
                return Err(Error::NonFinite("pooled rows"));
            }
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Anything that exposes node features and an intra-graph structure matrix.
///
/// Implemented by [`StructuredGraph`] and by geodesic interpolants whose
/// structure is a product distance rather than a hop count.
pub trait NodeStructure {
    fn features(&self) -> ArrayView2<'_, f64>;
    fn structure(&self) -> ArrayView2<'_, f64>;

    fn node_count(&self) -> usize {
        self.features().nrows()
    }

    /// Mass of node `i` in the graph's mixing measure.
    fn weight(&self, _i: usize) -> f64 {
        1.0
    }
}

/// Graph with node features, undirected edges, unit weights and hop-count
/// structure distances.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGraph {
    features: EmbeddingMatrix,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    structure: Array2<f64>,
}

impl StructuredGraph {
    /// Builds a graph from explicit undirected edges. Pairs are normalized to
    /// `(min, max)` and deduplicated; self-loops are rejected.
    pub fn from_edges(features: EmbeddingMatrix, edges: &[(usize, usize)]) -> Result<Self> {
        let n = features.rows();
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::shape(format!("edge ({a},{b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::shape(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let structure = shortest_path_matrix(&edges, n)?;
        Ok(Self { features, edges, weights: vec![1.0; n], structure })
    }

    /// Same topology, new node features (e.g. after message passing).
    pub fn with_features(&self, features: EmbeddingMatrix) -> Result<Self> {
        if features.rows() != self.node_count() {
            return Err(Error::shape(format!(
                "replacement features have {} rows, graph has {} nodes",
                features.rows(),
                self.node_count()
            )));
        }
        Ok(Self { features, ..self.clone() })
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]` of the result.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        crate::solver::Matching::new(perm.to_vec())?;
        if perm.len() != n {
            return Err(Error::shape(format!("permutation of length {} for {n} nodes", perm.len())));
        }
        let mut feats = Array2::zeros((n, self.features.dim()));
        for (i, &p) in perm.iter().enumerate() {
            feats.row_mut(p).assign(&self.features.row(i));
        }
        let edges: Vec<_> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::from_edges(EmbeddingMatrix::new(feats)?, &edges)
    }

    pub fn embedding(&self) -> &EmbeddingMatrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Neighbor lists in ascending index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|v| v.sort_unstable());
        adj
    }
}

impl NodeStructure for StructuredGraph {
    fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    fn structure(&self) -> ArrayView2<'_, f64> {
        self.structure.view()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Pairwise feature distances within one matrix.
fn pairwise_distances(features: &EmbeddingMatrix, metric: Metric) -> Result<Array2<f64>> {
    let n = features.rows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = metric.distance(features.row(i), features.row(j), (i, j))?;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Symmetrized k-nearest-neighbor graph. Ties are broken toward the smaller
/// node index.
pub fn build_knn_graph(features: EmbeddingMatrix, k: usize, metric: Metric) -> Result<StructuredGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    if metric == Metric::Cosine {
        if let Some(row) = (0..n).find(|&i| features.row(i).iter().all(|&v| v == 0.0)) {
            return Err(Error::DegenerateVector { row });
        }
    }
    let dist = pairwise_distances(&features, metric)?;
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
        edges.extend(others.into_iter().take(k).map(|j| (i, j)));
    }
    StructuredGraph::from_edges(features, &edges)
}

/// Unweighted all-pairs hop counts by BFS from every source. Unreachable
/// pairs get the sentinel `n`.
pub fn shortest_path_matrix(edges: &[(usize, usize)], n: usize) -> Result<Array2<f64>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::shape(format!("edge ({a},{b}) out of range for {n} nodes")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut out = Array2::from_elem((n, n), n as f64);
    let mut queue = VecDeque::new();
    for src in 0..n {
        let mut hops = vec![usize::MAX; n];
        hops[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (dst, &h) in hops.iter().enumerate() {
            if h != usize::MAX {
                out[[src, dst]] = h as f64;
            }
        }
    }
    Ok(out)
}

/// `A^v[i, j] = d_f(f_1i, f_2j)`.
pub fn vertex_affinity<G1, G2>(g1: &G1, g2: &G2, metric: Metric) -> Result<Array2<f64>>
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    let (f1, f2) = (g1.features(), g2.features());
    if f1.ncols() != f2.ncols() {
        return Err(Error::shape(format!("feature dimensions differ ({} vs {})", f1.ncols(), f2.ncols())));
    }
    let mut out = Array2::zeros((f1.nrows(), f2.nrows()));
    for i in 0..f1.nrows() {
        for j in 0..f2.nrows() {
            out[[i, j]] = metric.distance(f1.row(i), f2.row(j), (i, j))?;
        }
    }
    Ok(out)
}

/// `A^e[i, j, k, l] = |d_1(i, k) - d_2(j, l)|`, dense over all node pairs.
/// Indices `i, k` run over `g1` and `j, l` over `g2`; the shape is `(M, N, M, N)`.
pub fn edge_affinity<G1, G2>(g1: &G1, g2: &G2) -> Array4<f64>
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    let (s1, s2) = (g1.structure(), g2.structure());
    let (m, n) = (s1.nrows(), s2.nrows());
    Array4::from_shape_fn((m, n, m, n), |(i, j, k, l)| (s1[[i, k]] - s2[[j, l]]).abs())
}

/// Vertex affinity matrix and edge affinity tensor between two graphs.
///
/// Affinities built by [`AffinityPair::between`] are nonnegative; perturbed
/// copies used during gradient estimation need not be.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityPair {
    pub vertex: Array2<f64>,
    pub edge: Array4<f64>,
}

impl AffinityPair {
    pub fn new(vertex: Array2<f64>, edge: Array4<f64>) -> Result<Self> {
        let (m, n) = vertex.dim();
        if edge.dim() != (m, n, m, n) {
            return Err(Error::shape(format!("edge tensor {:?} does not match vertex matrix {m}x{n}", edge.dim())));
        }
        if vertex.iter().chain(edge.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affinity"));
        }
        Ok(Self { vertex, edge })
    }

    pub fn between<G1, G2>(g1: &G1, g2: &G2, metric: Metric) -> Result<Self>
    where
        G1: NodeStructure + ?Sized,
        G2: NodeStructure + ?Sized,
    {
        Ok(Self { vertex: vertex_affinity(g1, g2, metric)?, edge: edge_affinity(g1, g2) })
    }

    /// `(M, N)`.
    pub fn dim(&self) -> (usize, usize) {
        self.vertex.dim()
    }

    /// Side length of a square instance.
    pub(crate) fn square_size(&self) -> Result<usize> {
        let (m, n) = self.dim();
        if m != n {
            return Err(Error::shape(format!("alignment requires a square instance, got {m}x{n}")));
        }
        if self.edge.dim() != (m, n, m, n) {
            return Err(Error::shape(format!("edge tensor {:?} inconsistent with {m}x{n}", self.edge.dim())));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn pool_examples() {
        assert_eq!(pool_embeddings(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pool_embeddings(&[vec![2.0, 4.0]]).unwrap(), vec![2.0, 4.0]);
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        // per-column sum / 3
        let oracle: Vec<f64> = (0..2).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / 3.0).collect();
        assert_eq!(oracle, vec![1.0, 1.0]);
        assert_eq!(pool_embeddings(&rows).unwrap(), oracle);
    }

    #[test]
    fn pool_errors() {
        assert!(matches!(pool_embeddings(&[]), Err(Error::EmptyInput)));
        assert!(matches!(pool_embeddings(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn knn_equidistant_triangle() {
        let f = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let g = build_knn_graph(f, 2, Metric::Euclidean).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(g.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let f = random_matrix(&mut rng, 6, 3);
            // O(N^2) oracle: for each node pick the k smallest by (distance, index).
            let mut expected = BTreeSet::new();
            for i in 0..6 {
                let mut d: Vec<(f64, usize)> = (0..6)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let s: f64 = (0..3).map(|c| (f.row(i)[c] - f.row(j)[c]).powi(2)).sum();
                        (s.sqrt(), j)
                    })
                    .collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, j) in d.iter().take(2) {
                    expected.insert((i.min(j), i.max(j)));
                }
            }
            let g = build_knn_graph(f, 2, Metric::Euclidean).unwrap();
            assert_eq!(g.edges(), expected.into_iter().collect::<Vec<_>>().as_slice());
        }
    }

    #[test]
    fn knn_errors() {
        let f = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(build_knn_graph(f.clone(), 2, Metric::Cosine), Err(Error::InvalidK { .. })));
        assert!(matches!(build_knn_graph(f, 0, Metric::Cosine), Err(Error::InvalidK { .. })));
        let z = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(build_knn_graph(z, 1, Metric::Cosine), Err(Error::DegenerateVector { row: 1 })));
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        // Node 0 is equidistant from 1 and 2; 2 and 3 pick each other.
        let f = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.5, 0.0]]).unwrap();
        let g = build_knn_graph(f, 1, Metric::Euclidean).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn shortest_path_examples() {
        let d = shortest_path_matrix(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(d[[0, 2]], 2.0);
        let e = shortest_path_matrix(&[], 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(e[[i, j]], if i == j { 0.0 } else { 3.0 });
            }
        }
        assert!(shortest_path_matrix(&[(0, 3)], 3).is_err());
    }

    #[test]
    fn shortest_path_matches_bfs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 7;
            let edges: Vec<(usize, usize)> =
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.random_bool(0.3)).collect();
            let d = shortest_path_matrix(&edges, n).unwrap();
            // Independent oracle: Floyd-Warshall over an adjacency matrix.
            let mut fw = vec![vec![f64::INFINITY; n]; n];
            for (i, row) in fw.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            for &(a, b) in &edges {
                fw[a][b] = 1.0;
                fw[b][a] = 1.0;
            }
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if fw[i][m] + fw[m][j] < fw[i][j] {
                            fw[i][j] = fw[i][m] + fw[m][j];
                        }
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let want = if fw[i][j].is_finite() { fw[i][j] } else { n as f64 };
                    assert_eq!(d[[i, j]], want);
                    assert_eq!(d[[i, j]], d[[j, i]]);
                }
            }
        }
    }

    #[test]
    fn vertex_affinity_examples() {
        let a = StructuredGraph::from_edges(EmbeddingMatrix::new(array![[1.0, 0.0]]).unwrap(), &[]).unwrap();
        let b = StructuredGraph::from_edges(EmbeddingMatrix::new(array![[0.0, 1.0]]).unwrap(), &[]).unwrap();
        assert_eq!(vertex_affinity(&a, &a, Metric::Cosine).unwrap()[[0, 0]], 0.0);
        assert!((vertex_affinity(&a, &b, Metric::Cosine).unwrap()[[0, 0]] - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f1 = random_matrix(&mut rng, 3, 4);
        let f2 = random_matrix(&mut rng, 3, 4);
        let g1 = StructuredGraph::from_edges(f1.clone(), &[]).unwrap();
        let g2 = StructuredGraph::from_edges(f2.clone(), &[]).unwrap();
        let av = vertex_affinity(&g1, &g2, Metric::Cosine).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let x = f1.row(i).to_vec();
                let y = f2.row(j).to_vec();
                let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
                let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
                let ny: f64 = y.iter().map(|p| p * p).sum::<f64>().sqrt();
                assert!((av[[i, j]] - (1.0 - dot / (nx * ny))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_affinity_rejects_dimension_mismatch() {
        let a = StructuredGraph::from_edges(EmbeddingMatrix::new(array![[1.0, 0.0]]).unwrap(), &[]).unwrap();
        let b = StructuredGraph::from_edges(EmbeddingMatrix::new(array![[1.0, 0.0, 0.0]]).unwrap(), &[]).unwrap();
        assert!(matches!(vertex_affinity(&a, &b, Metric::Euclidean), Err(Error::Shape(_))));
    }

    #[test]
    fn edge_affinity_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g1 = build_knn_graph(random_matrix(&mut rng, 4, 2), 1, Metric::Euclidean).unwrap();
        let g2 = build_knn_graph(random_matrix(&mut rng, 4, 2), 1, Metric::Euclidean).unwrap();
        let p1 = shortest_path_matrix(g1.edges(), 4).unwrap();
        let p2 = shortest_path_matrix(g2.edges(), 4).unwrap();
        let ae = edge_affinity(&g1, &g2);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        assert_eq!(ae[[i, j, k, l]], (p1[[i, k]] - p2[[j, l]]).abs());
                        assert_eq!(ae[[i, j, k, l]], ae[[k, l, i, j]]);
                    }
                }
            }
        }
        let same = edge_affinity(&g1, &g1);
        for i in 0..4 {
            for k in 0..4 {
                assert_eq!(same[[i, i, k, k]], 0.0);
            }
        }
    }

    #[test]
    fn relabel_permutes_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = build_knn_graph(random_matrix(&mut rng, 5, 2), 2, Metric::Euclidean).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let h = g.relabel(&perm).unwrap();
        for i in 0..5 {
            assert_eq!(h.features().row(perm[i]), g.features().row(i));
            for k in 0..5 {
                assert_eq!(h.structure()[[perm[i], perm[k]]], g.structure()[[i, k]]);
            }
        }
    }
}
