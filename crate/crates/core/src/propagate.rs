//! Parameter-free mean-aggregation message passing over a graph's edges.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EmbeddingMatrix, NodeStructure, StructuredGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub layers: usize,
    /// Include the node itself in the neighborhood mean.
    pub include_self: bool,
    /// Weight of the aggregated feature against the original, in `[0, 1]`.
    pub mix: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { layers: 2, include_self: true, mix: 0.5 }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::InvalidParameter(format!("mix must lie in [0, 1], got {}", self.mix)));
        }
        Ok(())
    }
}

/// One-layer mixing matrix `(1 - mix) I + mix M`, where row `i` of `M`
/// averages over the neighborhood of `i`. A node with an empty neighborhood
/// (no edges, `include_self = false`) keeps its own feature.
fn layer_matrix(g: &StructuredGraph, cfg: &PropagationConfig) -> Array2<f64> {
    let n = g.node_count();
    let adj = g.adjacency();
    let mut t = Array2::zeros((n, n));
    for (i, nbrs) in adj.iter().enumerate() {
        t[[i, i]] += 1.0 - cfg.mix;
        let count = nbrs.len() + usize::from(cfg.include_self);
        if count == 0 {
            t[[i, i]] += cfg.mix;
            continue;
        }
        let w = cfg.mix / count as f64;
        if cfg.include_self {
            t[[i, i]] += w;
        }
        for &j in nbrs {
            t[[i, j]] += w;
        }
    }
    t
}

/// Linear operator `T` with `propagate(g) = T · F`. Depends only on topology,
/// so gradients flow back as `T^T · dF`.
pub fn propagation_operator(g: &StructuredGraph, cfg: &PropagationConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let layer = layer_matrix(g, cfg);
    let mut t = Array2::eye(g.node_count());
    for _ in 0..cfg.layers {
        t = layer.dot(&t);
    }
    Ok(t)
}

/// Applies `cfg.layers` rounds of `f_i <- (1 - mix) f_i + mix · mean(N(i))`.
pub fn propagate(g: &StructuredGraph, cfg: &PropagationConfig) -> Result<EmbeddingMatrix> {
    cfg.validate()?;
    let layer = layer_matrix(g, cfg);
    let mut f = g.features().to_owned();
    for _ in 0..cfg.layers {
        f = layer.dot(&f);
    }
    EmbeddingMatrix::new(f)
}
