//! Perturb-and-solve gradient estimation through the alignment solver.
//!
//! For one sample, Gumbel noise `(eps, eps')` is drawn once and added to the
//! vertex matrix and edge tensor. The noisy instance is solved (`V~`), a
//! target instance is formed by moving the noisy costs along the Hamming-loss
//! gradient, and the target is re-solved with the same noise. The estimate is
//! the difference of the two solutions, lifted to the edge tensor through
//! `E[i, j, k, l] = V[i, j] V[k, l]`.

use ndarray::{Array2, Array4, Zip};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityPair;
use crate::solver::{Matching, Solver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImleConfig {
    /// Step size applied to the loss gradient when forming the target instance.
    pub lambda: f64,
    /// Gumbel scale.
    pub noise_scale: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ImleConfig {
    fn default() -> Self {
        Self { lambda: 10.0, noise_scale: 1.0, samples: 1, seed: 0 }
    }
}

impl ImleConfig {
    /// `lambda = 0` is accepted: it disables the target shift and yields a zero
    /// estimate.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidScale(self.noise_scale));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Same settings on an independent noise stream (e.g. one per modality).
    pub fn with_stream(&self, stream: u64) -> Self {
        Self { seed: derive_seed(self.seed, stream), ..self.clone() }
    }
}

/// SplitMix64 finalizer over `base ^ stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = (base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -scale * (-u.ln()).ln()
}

/// `len` i.i.d. Gumbel(0, `scale`) draws, `-scale * ln(-ln U)` with
/// `U ~ Uniform(0, 1)`.
pub fn sample_gumbel(len: usize, scale: f64, seed: u64) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidScale(scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| gumbel(&mut rng, scale)).collect())
}

/// Estimated loss gradients with respect to the vertex matrix and edge tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub vertex: Array2<f64>,
    pub edge: Array4<f64>,
}

/// Loss gradient of the Hamming loss w.r.t. the predicted matching, `1 - 2V*`,
/// and its edge lift `1 - 2 V*[i, j] V*[k, l]`.
fn hamming_gradient(truth: &Matching) -> (Array2<f64>, Array4<f64>) {
    let v = truth.to_matrix();
    let n = truth.len();
    let gv = v.mapv(|x| 1.0 - 2.0 * x);
    let ge = Array4::from_shape_fn((n, n, n, n), |(i, j, k, l)| 1.0 - 2.0 * v[[i, j]] * v[[k, l]]);
    (gv, ge)
}

fn edge_indicator(m: &Matching) -> Array4<f64> {
    let n = m.len();
    let s = m.sigma();
    Array4::from_shape_fn((n, n, n, n), |(i, j, k, l)| if s[i] == j && s[k] == l { 1.0 } else { 0.0 })
}

/// One coupled sample: noisy solve and target solve share the same noise.
/// Returns `(V~, V_target)`.
pub fn imle_sample(
    aff: &AffinityPair,
    truth: &Matching,
    cfg: &ImleConfig,
    solver: &Solver,
    sample: usize,
) -> Result<(Matching, Matching)> {
    let n = aff.square_size()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ sample as u64);
    let mut noisy = aff.clone();
    noisy.vertex.mapv_inplace(|a| a + gumbel(&mut rng, cfg.noise_scale));
    noisy.edge.mapv_inplace(|a| a + gumbel(&mut rng, cfg.noise_scale));
    let forward = solver.solve(&noisy)?.sigma;

    if cfg.lambda == 0.0 {
        return Ok((forward.clone(), forward));
    }
    let (gv, ge) = hamming_gradient(truth);
    debug_assert_eq!(gv.nrows(), n);
    // The solver minimizes cost, so moving toward lower loss means raising the
    // cost of entries the loss penalizes.
    Zip::from(&mut noisy.vertex).and(&gv).for_each(|a, g| *a += cfg.lambda * g);
    Zip::from(&mut noisy.edge).and(&ge).for_each(|a, g| *a += cfg.lambda * g);
    let target = solver.solve(&noisy)?.sigma;
    Ok((forward, target))
}

/// Averages `cfg.samples` coupled differences `V_target - V~` (and their edge
/// lifts). Descending along the estimate lowers the cost of assignments the
/// loss favors and raises the cost of the current noisy solution.
pub fn estimate_gradients(
    aff: &AffinityPair,
    truth: &Matching,
    cfg: &ImleConfig,
    solver: &Solver,
) -> Result<GradEstimate> {
    cfg.validate()?;
    let n = aff.square_size()?;
    if truth.len() != n {
        return Err(Error::shape(format!("truth of size {} for a size-{n} instance", truth.len())));
    }
    let pairs = (0..cfg.samples)
        .into_par_iter()
        .map(|s| imle_sample(aff, truth, cfg, solver, s))
        .collect::<Result<Vec<_>>>()?;

    let mut vertex = Array2::zeros((n, n));
    let mut edge = Array4::zeros((n, n, n, n));
    for (forward, target) in &pairs {
        if forward == target {
            continue;
        }
        vertex += &target.to_matrix();
        vertex -= &forward.to_matrix();
        edge += &edge_indicator(target);
        edge -= &edge_indicator(forward);
    }
    let s = cfg.samples as f64;
    vertex /= s;
    edge /= s;
    Ok(GradEstimate { vertex, edge })
}
