//! Multi-graph alignment engine.
//!
//! Embedding matrices are turned into structured graphs (k-NN edges plus a
//! shortest-path structure matrix). Two graphs are aligned by solving a
//! quadratic assignment over vertex and pairwise-structure affinities, and K
//! modality graphs are aligned through a shared barycenter graph built from
//! known correspondences. A Hamming matching loss supervises the alignment and
//! perturbation-based (IMLE) estimation supplies gradients through the
//! discrete solver.
//!
//! The optimal alignment cost doubles as a graph distance; [`metric`] checks
//! its metric axioms and constant-speed geodesics on small instances.

pub mod assignment;
pub mod bench;
pub mod error;
pub mod graph;
pub mod imle;
pub mod io;
pub mod metric;
pub mod multi;
pub mod propagate;
pub mod solver;
pub mod trainer;

pub use bench::{run_bench, BenchConfig, BenchRow};
pub use error::{Error, Result};
pub use graph::{
    build_knn_graph, edge_affinity, pool_embeddings, shortest_path_matrix, vertex_affinity, AffinityPair,
    EmbeddingMatrix, Metric, NodeStructure, StructuredGraph, DEFAULT_K,
};
pub use imle::{estimate_gradients, sample_gumbel, GradEstimate, ImleConfig};
pub use metric::{
    d_sga, geodesic_interpolate, isomorphism_witness, verify_geodesics, verify_metric_axioms,
    verify_metric_axioms_with, GeodesicPoint, InstanceSampler, MetricReport,
};
pub use multi::{
    build_barycenter, ground_truth, hamming_loss, knn_clamped, solve_multi, solve_pairwise, AlignOptions,
    BarycenterGraph, ModalityBatch, MultiMatching, MultiSolveReport, PairwiseReport,
};
pub use propagate::{propagate, PropagationConfig};
pub use solver::{
    objective_value, solve_exact, solve_heuristic, HeuristicConfig, Matching, Method, SolveReport, Solver, EXACT_LIMIT,
};

/// Absolute tolerance for real-valued equality checks.
pub const ABS_TOL: f64 = 1e-9;
/// Relative tolerance for real-valued equality checks.
pub const REL_TOL: f64 = 1e-6;

/// `a == b` up to the crate-wide relative/absolute tolerance.
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= ABS_TOL.max(REL_TOL * a.abs().max(b.abs()))
}
