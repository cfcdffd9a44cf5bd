//! K-way alignment through a barycenter graph, plus the Hamming matching loss.
//!
//! Record `k` of every modality describes the same sample, so the barycenter
//! node `k` is the mean of the K modality features of record `k` and the
//! ground-truth matching of each modality onto the barycenter is the
//! identity. Aligning K graphs then reduces to K independent solves.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, AffinityPair, EmbeddingMatrix, Metric, NodeStructure, StructuredGraph, DEFAULT_K};
use crate::propagate::{propagate, PropagationConfig};
use crate::solver::{Matching, SolveReport, Solver};

/// Default modality names for the tri-modal case.
pub const TRIPLET_NAMES: [&str; 3] = ["v", "a", "ae"];

/// B aligned records across K >= 2 modalities; row `k` of every view refers
/// to the same sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    names: Vec<String>,
    views: Vec<EmbeddingMatrix>,
}

/// The tri-modal batch (visual, answer, extended answer).
pub type TripletBatch = ModalityBatch;

impl ModalityBatch {
    pub fn new(names: Vec<String>, views: Vec<EmbeddingMatrix>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::shape(format!("need at least two modalities, got {}", views.len())));
        }
        if names.len() != views.len() {
            return Err(Error::shape(format!("{} names for {} modalities", names.len(), views.len())));
        }
        let (b, d) = (views[0].rows(), views[0].dim());
        for (name, v) in names.iter().zip(&views) {
            if v.rows() != b || v.dim() != d {
                return Err(Error::shape(format!("modality '{name}' is {}x{}, expected {b}x{d}", v.rows(), v.dim())));
            }
        }
        Ok(Self { names, views })
    }

    pub fn triplet(v: EmbeddingMatrix, a: EmbeddingMatrix, ae: EmbeddingMatrix) -> Result<Self> {
        Self::new(TRIPLET_NAMES.iter().map(|s| s.to_string()).collect(), vec![v, a, ae])
    }

    /// Unnamed views, labelled `m0, m1, ...`.
    pub fn from_views(views: Vec<EmbeddingMatrix>) -> Result<Self> {
        let names = if views.len() == 3 {
            TRIPLET_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..views.len()).map(|i| format!("m{i}")).collect()
        };
        Self::new(names, views)
    }

    pub fn size(&self) -> usize {
        self.views[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.views[0].dim()
    }

    pub fn modality_count(&self) -> usize {
        self.views.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn views(&self) -> &[EmbeddingMatrix] {
        &self.views
    }

    /// Applies the same record permutation to every modality: record `i`
    /// moves to position `perm[i]`.
    pub fn permute_records(&self, perm: &Matching) -> Result<Self> {
        if perm.len() != self.size() {
            return Err(Error::shape("permutation length differs from batch size"));
        }
        let views = self
            .views
            .iter()
            .map(|v| {
                let mut out = Array2::zeros((v.rows(), v.dim()));
                for (i, &p) in perm.sigma().iter().enumerate() {
                    out.row_mut(p).assign(&v.row(i));
                }
                EmbeddingMatrix::new(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.names.clone(), views)
    }
}

/// Graph-construction options shared by the modality and barycenter graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    /// Requested neighbor count; clamped to `B - 1` for small batches.
    pub k: usize,
    pub metric: Metric,
    /// Optional message passing applied to modality features before the
    /// barycenter is formed.
    pub propagation: Option<PropagationConfig>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { k: DEFAULT_K, metric: Metric::Cosine, propagation: None }
    }
}

impl AlignOptions {
    pub fn new(k: usize, metric: Metric) -> Self {
        Self { k, metric, propagation: None }
    }
}

/// k-NN graph with `k` clamped to `n - 1`; a single node gets no edges.
pub fn knn_clamped(features: EmbeddingMatrix, k: usize, metric: Metric) -> Result<StructuredGraph> {
    let n = features.rows();
    if n == 1 || k == 0 {
        if metric == Metric::Cosine && features.row(0).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateVector { row: 0 });
        }
        return StructuredGraph::from_edges(features, &[]);
    }
    build_knn_graph(features, k.min(n - 1), metric)
}

/// Barycenter graph whose node `k` carries the mean of the K modality
/// features of record `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BarycenterGraph(StructuredGraph);

impl BarycenterGraph {
    pub fn graph(&self) -> &StructuredGraph {
        &self.0
    }

    fn from_features(features: &[&EmbeddingMatrix], k: usize, metric: Metric) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyInput)?;
        let mut mean = Array2::<f64>::zeros((first.rows(), first.dim()));
        for f in features {
            if f.rows() != first.rows() || f.dim() != first.dim() {
                return Err(Error::shape("modality feature matrices differ in shape"));
            }
            mean += &f.view();
        }
        mean /= features.len() as f64;
        Ok(Self(knn_clamped(EmbeddingMatrix::new(mean)?, k, metric)?))
    }
}

impl NodeStructure for BarycenterGraph {
    fn features(&self) -> ndarray::ArrayView2<'_, f64> {
        self.0.features()
    }

    fn structure(&self) -> ndarray::ArrayView2<'_, f64> {
        self.0.structure()
    }
}

/// Barycenter of the raw modality views.
pub fn build_barycenter(batch: &ModalityBatch, k: usize, metric: Metric) -> Result<BarycenterGraph> {
    let refs: Vec<_> = batch.views().iter().collect();
    BarycenterGraph::from_features(&refs, k, metric)
}

/// Everything needed to solve (and differentiate) one multi-alignment step.
#[derive(Clone, Debug)]
pub struct AlignmentProblem {
    /// Modality graphs carrying (possibly propagated) features.
    pub graphs: Vec<StructuredGraph>,
    pub barycenter: BarycenterGraph,
    /// `affinities[s]` compares modality `s` against the barycenter.
    pub affinities: Vec<AffinityPair>,
    /// Per-modality propagation operators, when propagation is enabled.
    pub operators: Option<Vec<Array2<f64>>>,
}

type ModalityGraphs = (Vec<StructuredGraph>, Option<Vec<Array2<f64>>>);

/// Per-modality graphs (optionally propagated).
fn modality_graphs(batch: &ModalityBatch, opts: &AlignOptions) -> Result<ModalityGraphs> {
    let mut graphs = Vec::with_capacity(batch.modality_count());
    let mut ops = opts.propagation.as_ref().map(|_| Vec::new());
    for view in batch.views() {
        let g = knn_clamped(view.clone(), opts.k, opts.metric)?;
        match (&opts.propagation, ops.as_mut()) {
            (Some(cfg), Some(ops)) => {
                ops.push(crate::propagate::propagation_operator(&g, cfg)?);
                let z = propagate(&g, cfg)?;
                graphs.push(g.with_features(z)?);
            }
            _ => graphs.push(g),
        }
    }
    Ok((graphs, ops))
}

/// Builds modality graphs, the barycenter and per-modality affinities.
pub fn build_problem(batch: &ModalityBatch, opts: &AlignOptions) -> Result<AlignmentProblem> {
    let (graphs, operators) = modality_graphs(batch, opts)?;
    let feats: Vec<_> = graphs.iter().map(|g| g.embedding()).collect();
    let barycenter = BarycenterGraph::from_features(&feats, opts.k, opts.metric)?;
    let affinities =
        graphs.iter().map(|g| AffinityPair::between(g, &barycenter, opts.metric)).collect::<Result<Vec<_>>>()?;
    Ok(AlignmentProblem { graphs, barycenter, affinities, operators })
}

/// One matching per modality, each onto the barycenter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiMatching(pub Vec<Matching>);

impl MultiMatching {
    pub fn matchings(&self) -> &[Matching] {
        &self.0
    }

    /// For every barycenter node `j`, the modality nodes mapped onto it.
    /// Sorted, so two formulations can be compared as sets.
    pub fn triplets(&self) -> Vec<Vec<usize>> {
        let inverses: Vec<_> = self.0.iter().map(Matching::inverse).collect();
        let n = self.0.first().map_or(0, Matching::len);
        let mut out: Vec<Vec<usize>> = (0..n).map(|j| inverses.iter().map(|inv| inv.sigma()[j]).collect()).collect();
        out.sort();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSolveReport {
    pub modalities: Vec<String>,
    pub reports: Vec<SolveReport>,
    /// Sum of the per-modality objectives.
    pub total_objective: f64,
}

impl MultiSolveReport {
    pub fn matchings(&self) -> MultiMatching {
        MultiMatching(self.reports.iter().map(|r| r.sigma.clone()).collect())
    }
}

/// Solves every affinity of a prepared problem; results keep modality order.
pub fn solve_problem(problem: &AlignmentProblem, solver: &Solver) -> Result<Vec<SolveReport>> {
    problem.affinities.par_iter().map(|aff| solver.solve(aff)).collect()
}

/// Aligns each modality graph to the shared barycenter (K independent solves).
pub fn solve_multi(batch: &ModalityBatch, opts: &AlignOptions, solver: &Solver) -> Result<MultiSolveReport> {
    let problem = build_problem(batch, opts)?;
    let reports = solve_problem(&problem, solver)?;
    let total_objective = reports.iter().map(|r| r.objective).sum();
    Ok(MultiSolveReport { modalities: batch.names().to_vec(), reports, total_objective })
}

/// One solve per modality pair, kept for the barycenter ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub modalities: Vec<String>,
    /// `(s, t, report)` aligning modality `s` onto modality `t`, `s < t`.
    pub pairs: Vec<(usize, usize, SolveReport)>,
    pub total_objective: f64,
}

impl PairwiseReport {
    /// Correspondences induced through modality 0: `(i, sigma_01(i), sigma_02(i), ...)`.
    pub fn triplets(&self) -> Vec<Vec<usize>> {
        let from_first: Vec<_> = self.pairs.iter().filter(|(s, _, _)| *s == 0).collect();
        let n = from_first.first().map_or(0, |p| p.2.n);
        let mut out: Vec<Vec<usize>> = (0..n)
            .map(|i| std::iter::once(i).chain(from_first.iter().map(|p| p.2.sigma.sigma()[i])).collect())
            .collect();
        out.sort();
        out
    }

    /// True when every pairwise matching is the identity.
    pub fn all_identity(&self) -> bool {
        self.pairs.iter().all(|p| p.2.sigma.is_identity())
    }
}

/// Aligns every pair of modality graphs directly (K(K-1)/2 solves).
pub fn solve_pairwise(batch: &ModalityBatch, opts: &AlignOptions, solver: &Solver) -> Result<PairwiseReport> {
    let (graphs, _) = modality_graphs(batch, opts)?;
    let k = graphs.len();
    let index: Vec<(usize, usize)> = (0..k).flat_map(|s| ((s + 1)..k).map(move |t| (s, t))).collect();
    let pairs = index
        .par_iter()
        .map(|&(s, t)| {
            let aff = AffinityPair::between(&graphs[s], &graphs[t], opts.metric)?;
            Ok((s, t, solver.solve(&aff)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let total_objective = pairs.iter().map(|p| p.2.objective).sum();
    Ok(PairwiseReport { modalities: batch.names().to_vec(), pairs, total_objective })
}

/// Positional ground truth: the identity for every modality.
pub fn ground_truth(batch: &ModalityBatch) -> MultiMatching {
    MultiMatching(vec![Matching::identity(batch.size()); batch.modality_count()])
}

/// `sum_s <V̂_s, 1 - V*_s> + <V*_s, 1 - V̂_s>`: twice the number of rows whose
/// assignment differs, summed over modalities.
pub fn hamming_loss(predicted: &MultiMatching, truth: &MultiMatching) -> Result<f64> {
    if predicted.0.len() != truth.0.len() {
        return Err(Error::shape(format!(
            "{} predicted matchings vs {} truth matchings",
            predicted.0.len(),
            truth.0.len()
        )));
    }
    let mut loss = 0usize;
    for (p, t) in predicted.0.iter().zip(&truth.0) {
        if p.len() != t.len() {
            return Err(Error::shape(format!("matching sizes differ ({} vs {})", p.len(), t.len())));
        }
        loss += 2 * p.sigma().iter().zip(t.sigma()).filter(|(a, b)| a != b).count();
    }
    Ok(loss as f64)
}
