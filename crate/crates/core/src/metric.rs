//! The optimal alignment cost as a graph distance, with executable checks of
//! its metric axioms, the isomorphism characterization of zero distance, and
//! constant-speed geodesics built by interpolating along the optimal coupling.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, AffinityPair, EmbeddingMatrix, Metric, NodeStructure, StructuredGraph};
use crate::io::GraphExport;
use crate::solver::{solve_exact, Matching, SolveReport, EXACT_LIMIT};
use crate::{approx_eq, ABS_TOL};

/// Exact optimal alignment between two equal-size graphs.
pub fn d_sga_report<G1, G2>(g1: &G1, g2: &G2, metric: Metric) -> Result<SolveReport>
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    let (m, n) = (g1.node_count(), g2.node_count());
    if m != n {
        return Err(Error::SizeMismatch { left: m, right: n });
    }
    solve_exact(&AffinityPair::between(g1, g2, metric)?)
}

/// `min_V sum A^v V + sum A^e V V` over all bijections.
pub fn d_sga<G1, G2>(g1: &G1, g2: &G2, metric: Metric) -> Result<f64>
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    Ok(d_sga_report(g1, g2, metric)?.objective)
}

/// Checks the three isomorphism conditions for `sigma`: equal node weights,
/// equal features and preserved structure distances (both within 1e-9).
pub fn check_isomorphism<G1, G2>(g1: &G1, g2: &G2, sigma: &Matching) -> bool
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    let n = g1.node_count();
    if g2.node_count() != n || sigma.len() != n || g1.features().ncols() != g2.features().ncols() {
        return false;
    }
    let (f1, f2, s1, s2) = (g1.features(), g2.features(), g1.structure(), g2.structure());
    let s = sigma.sigma();
    (0..n).all(|i| {
        g1.weight(i) == g2.weight(s[i])
            && f1.row(i).iter().zip(f2.row(s[i]).iter()).all(|(a, b)| (a - b).abs() <= ABS_TOL)
            && (0..n).all(|k| (s1[[i, k]] - s2[[s[i], s[k]]]).abs() <= ABS_TOL)
    })
}

/// Lexicographically first bijection satisfying the isomorphism conditions,
/// found by backtracking with per-node pruning; `None` if no such bijection
/// exists or the sizes differ.
pub fn isomorphism_witness<G1, G2>(g1: &G1, g2: &G2) -> Option<Matching>
where
    G1: NodeStructure + ?Sized,
    G2: NodeStructure + ?Sized,
{
    let n = g1.node_count();
    if g2.node_count() != n || g1.features().ncols() != g2.features().ncols() {
        return None;
    }
    let (f1, f2, s1, s2) = (g1.features(), g2.features(), g1.structure(), g2.structure());
    let close = |a: f64, b: f64| (a - b).abs() <= ABS_TOL;
    // candidates[i]: nodes of g2 compatible with node i of g1 on their own.
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    g1.weight(i) == g2.weight(j)
                        && f1.row(i).iter().zip(f2.row(j).iter()).all(|(a, b)| close(*a, *b))
                        && close(s1[[i, i]], s2[[j, j]])
                })
                .collect()
        })
        .collect();

    fn extend(
        i: usize,
        sigma: &mut Vec<usize>,
        used: &mut [bool],
        candidates: &[Vec<usize>],
        ok: &dyn Fn(usize, usize, usize, usize) -> bool,
    ) -> bool {
        if i == candidates.len() {
            return true;
        }
        for &j in &candidates[i] {
            if used[j] || !(0..i).all(|k| ok(i, j, k, sigma[k])) {
                continue;
            }
            used[j] = true;
            sigma.push(j);
            if extend(i + 1, sigma, used, candidates, ok) {
                return true;
            }
            sigma.pop();
            used[j] = false;
        }
        false
    }

    let ok = |i: usize, j: usize, k: usize, l: usize| close(s1[[i, k]], s2[[j, l]]) && close(s1[[k, i]], s2[[l, j]]);
    let mut sigma = Vec::with_capacity(n);
    let mut used = vec![false; n];
    extend(0, &mut sigma, &mut used, &candidates, &ok).then(|| Matching::new(sigma).expect("bijection by construction"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `d(a, b) != d(b, a)`.
    Symmetry,
    /// `d(a, c) > d(a, b) + d(b, c)`.
    Triangle,
    /// `d(a, a) != 0`.
    Identity,
    /// `d(a, b) > 0` although an isomorphism exists.
    Positivity,
    /// `d(a, b) = 0` but no isomorphism exists.
    Equality,
    /// `d(mu_u, mu_t) != |t - u| d(mu_0, mu_1)` along a geodesic.
    ConstantSpeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub trial: usize,
    pub instances: Vec<GraphExport>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Zero-distance pair together with its verified isomorphism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsomorphicPair {
    pub trial: usize,
    pub witness: Matching,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trials: usize,
    pub violations: Vec<Violation>,
    #[serde(default)]
    pub isomorphic: Vec<IsomorphicPair>,
}

impl MetricReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn export(gs: &[&StructuredGraph]) -> Vec<GraphExport> {
    gs.iter().map(|g| GraphExport::from_graph(g, true)).collect()
}

/// Checks one triple `(a, b, c)` under an arbitrary distance. The equality
/// relation is judged against [`isomorphism_witness`], independently of the
/// distance under test.
pub fn check_triple<D>(
    trial: usize,
    a: &StructuredGraph,
    b: &StructuredGraph,
    c: &StructuredGraph,
    dist: &D,
) -> Result<(Vec<Violation>, Option<IsomorphicPair>)>
where
    D: Fn(&StructuredGraph, &StructuredGraph) -> Result<f64> + ?Sized,
{
    let d_ab = dist(a, b)?;
    let d_ba = dist(b, a)?;
    let d_bc = dist(b, c)?;
    let d_ac = dist(a, c)?;
    let d_aa = dist(a, a)?;
    let mut out = Vec::new();
    let mut push = |kind, inst: &[&StructuredGraph], lhs, rhs| {
        out.push(Violation { kind, trial, instances: export(inst), lhs, rhs })
    };
    if (d_ab - d_ba).abs() > ABS_TOL {
        push(ViolationKind::Symmetry, &[a, b], d_ab, d_ba);
    }
    if d_ac > d_ab + d_bc + ABS_TOL {
        push(ViolationKind::Triangle, &[a, b, c], d_ac, d_ab + d_bc);
    }
    if d_aa.abs() > ABS_TOL {
        push(ViolationKind::Identity, &[a], d_aa, 0.0);
    }
    let witness = isomorphism_witness(a, b);
    let mut iso = None;
    match (d_ab <= ABS_TOL, witness) {
        (true, Some(w)) => iso = Some(IsomorphicPair { trial, witness: w }),
        (true, None) => push(ViolationKind::Equality, &[a, b], d_ab, 0.0),
        (false, Some(_)) => push(ViolationKind::Positivity, &[a, b], d_ab, 0.0),
        (false, None) => {}
    }
    Ok((out, iso))
}

/// Metric-axiom check for an arbitrary distance. `sampler(i)` is called
/// `3 * trials` times in order; trial `t` uses draws `3t, 3t + 1, 3t + 2`.
pub fn verify_metric_axioms_with<S, D>(mut sampler: S, trials: usize, dist: &D) -> Result<MetricReport>
where
    S: FnMut(usize) -> Result<StructuredGraph>,
    D: Fn(&StructuredGraph, &StructuredGraph) -> Result<f64> + Sync + ?Sized,
{
    let graphs = (0..3 * trials).map(&mut sampler).collect::<Result<Vec<_>>>()?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| check_triple(t, &graphs[3 * t], &graphs[3 * t + 1], &graphs[3 * t + 2], dist))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport { trials, ..Default::default() };
    for (v, iso) in per_trial {
        report.violations.extend(v);
        report.isomorphic.extend(iso);
    }
    Ok(report)
}

/// Metric-axiom check of the exact alignment distance under `metric`.
pub fn verify_metric_axioms<S>(sampler: S, trials: usize, metric: Metric) -> Result<MetricReport>
where
    S: FnMut(usize) -> Result<StructuredGraph>,
{
    verify_metric_axioms_with(sampler, trials, &|a: &StructuredGraph, b: &StructuredGraph| d_sga(a, b, metric))
}

/// A point on the geodesic between two graphs: one atom per matched pair
/// `(i, sigma*(i))`, with interpolated features and the product structure
/// distance `d_t((i,j),(k,l)) = (1 - t) d_0(i, k) + t d_1(j, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPoint {
    pub t: f64,
    pub features: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub structure: Array2<f64>,
}

impl NodeStructure for GeodesicPoint {
    fn features(&self) -> ndarray::ArrayView2<'_, f64> {
        self.features.view()
    }

    fn structure(&self) -> ndarray::ArrayView2<'_, f64> {
        self.structure.view()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicExport {
    pub t: f64,
    pub features: Vec<Vec<f64>>,
    pub pairs: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    pub structure: Vec<Vec<f64>>,
}

impl From<&GeodesicPoint> for GeodesicExport {
    fn from(p: &GeodesicPoint) -> Self {
        Self {
            t: p.t,
            features: p.features.outer_iter().map(|r| r.to_vec()).collect(),
            pairs: p.pairs.iter().map(|&(i, j)| [i, j]).collect(),
            weights: p.weights.clone(),
            structure: p.structure.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

/// Geodesic between two graphs along an exact optimal coupling. Only the
/// Euclidean feature distance is supported: interpolated features travel at
/// constant speed only under a norm-induced distance.
#[derive(Clone, Debug)]
pub struct Geodesic<'a> {
    g0: &'a StructuredGraph,
    g1: &'a StructuredGraph,
    coupling: Matching,
    distance: f64,
}

impl<'a> Geodesic<'a> {
    pub fn new(g0: &'a StructuredGraph, g1: &'a StructuredGraph, metric: Metric) -> Result<Self> {
        if metric != Metric::Euclidean {
            return Err(Error::InvalidParameter(
                "geodesics need a norm-induced feature distance; use the euclidean metric".into(),
            ));
        }
        let report = d_sga_report(g0, g1, Metric::Euclidean)?;
        Ok(Self { g0, g1, coupling: report.sigma, distance: report.objective })
    }

    pub fn coupling(&self) -> &Matching {
        &self.coupling
    }

    /// Distance between the endpoints.
    pub fn length(&self) -> f64 {
        self.distance
    }

    pub fn point(&self, t: f64) -> Result<GeodesicPoint> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("t must lie in [0, 1], got {t}")));
        }
        let sigma = self.coupling.sigma();
        let n = sigma.len();
        let (f0, f1) = (self.g0.features(), self.g1.features());
        let (s0, s1) = (self.g0.structure(), self.g1.structure());
        let mut features = Array2::zeros((n, f0.ncols()));
        for (i, &j) in sigma.iter().enumerate() {
            let row = &f0.row(i) * (1.0 - t) + &f1.row(j) * t;
            features.row_mut(i).assign(&row);
        }
        let structure = Array2::from_shape_fn((n, n), |(a, b)| (1.0 - t) * s0[[a, b]] + t * s1[[sigma[a], sigma[b]]]);
        Ok(GeodesicPoint {
            t,
            features,
            pairs: sigma.iter().enumerate().map(|(i, &j)| (i, j)).collect(),
            weights: vec![1.0; n],
            structure,
        })
    }
}

/// Point at `t` on the geodesic from `g1` to `g2`.
pub fn geodesic_interpolate(
    g1: &StructuredGraph,
    g2: &StructuredGraph,
    t: f64,
    metric: Metric,
) -> Result<GeodesicPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t must lie in [0, 1], got {t}")));
    }
    Geodesic::new(g1, g2, metric)?.point(t)
}

/// Checks `d(mu_u, mu_t) = |t - u| d(mu_0, mu_1)` over `grid x grid` for one
/// pair of graphs.
pub fn check_constant_speed(
    trial: usize,
    g0: &StructuredGraph,
    g1: &StructuredGraph,
    grid: &[f64],
) -> Result<Vec<Violation>> {
    let geo = Geodesic::new(g0, g1, Metric::Euclidean)?;
    let points = grid.iter().map(|&t| geo.point(t)).collect::<Result<Vec<_>>>()?;
    let full = d_sga(&geo.point(0.0)?, &geo.point(1.0)?, Metric::Euclidean)?;
    let mut out = Vec::new();
    for (a, pu) in points.iter().enumerate() {
        for pt in &points[a..] {
            let lhs = d_sga(pu, pt, Metric::Euclidean)?;
            let rhs = (pt.t - pu.t).abs() * full;
            if !approx_eq(lhs, rhs) {
                out.push(Violation {
                    kind: ViolationKind::ConstantSpeed,
                    trial,
                    instances: export(&[g0, g1]),
                    lhs,
                    rhs,
                });
            }
        }
    }
    Ok(out)
}

/// Constant-speed check over `trials` sampled pairs; `sampler(i)` is called
/// `2 * trials` times in order.
pub fn verify_geodesics<S>(mut sampler: S, trials: usize, grid: &[f64]) -> Result<MetricReport>
where
    S: FnMut(usize) -> Result<StructuredGraph>,
{
    let graphs = (0..2 * trials).map(&mut sampler).collect::<Result<Vec<_>>>()?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| check_constant_speed(t, &graphs[2 * t], &graphs[2 * t + 1], grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { trials, violations: per_trial.into_iter().flatten().collect(), isomorphic: Vec::new() })
}

/// Seeded source of random `n`-node graphs for the property checks:
/// uniform features in `[-1, 1]^2`, k-NN edges with a random `k`. With
/// probability `relabel_probability`, draw `3t + 1` (the second graph of a
/// triple) is a random relabeling of draw `3t`, so isomorphic pairs occur.
#[derive(Clone, Debug)]
pub struct InstanceSampler {
    rng: ChaCha8Rng,
    n: usize,
    relabel_probability: f64,
    last: Option<StructuredGraph>,
}

impl InstanceSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if !(2..=EXACT_LIMIT).contains(&n) {
            return Err(Error::InvalidParameter(format!("need 2 <= n <= {EXACT_LIMIT}, got {n}")));
        }
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), n, relabel_probability: 0.25, last: None })
    }

    pub fn with_relabel_probability(mut self, p: f64) -> Self {
        self.relabel_probability = p.clamp(0.0, 1.0);
        self
    }

    pub fn sample(&mut self, index: usize) -> Result<StructuredGraph> {
        let g = match self.last.take() {
            Some(prev) if index % 3 == 1 && self.rng.random_bool(self.relabel_probability) => {
                let mut perm: Vec<usize> = (0..self.n).collect();
                perm.shuffle(&mut self.rng);
                prev.relabel(&perm)?
            }
            _ => {
                let f = Array2::from_shape_fn((self.n, 2), |_| self.rng.random_range(-1.0..1.0));
                let k = self.rng.random_range(1..self.n);
                build_knn_graph(EmbeddingMatrix::new(f)?, k, Metric::Euclidean)?
            }
        };
        self.last = Some(g.clone());
        Ok(g)
    }
}
