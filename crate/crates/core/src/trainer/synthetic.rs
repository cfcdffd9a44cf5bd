//! Synthetic multi-modal data with known correspondences.
//!
//! Latents `z_k ~ N(0, margin^2 I)` in `R^d` are rejection-sampled until every
//! pair sits at least `margin` apart. Modality `s` observes
//! `x_{s,k} = M_s z_k + N(0, sigma^2 I_{d_raw})`, where the `d_raw x d` mixing
//! matrix `M_s` has random orthonormal columns. The latent dimension equals
//! the encoder output dimension, so a linear encoder can recover the latents
//! exactly up to noise. Held-out batches draw fresh latents and noise but
//! reuse the mixing matrices.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EmbeddingMatrix;
use crate::imle::derive_seed;
use crate::multi::{ModalityBatch, TRIPLET_NAMES};

/// Candidate draws per requested latent before giving up.
const ATTEMPTS_PER_LATENT: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub batch: usize,
    pub d_raw: usize,
    /// Latent and encoder output dimension, at most `d_raw`.
    pub d: usize,
    /// Minimum pairwise latent distance; also the latent scale.
    pub margin: f64,
    /// Per-coordinate observation noise.
    pub sigma: f64,
    pub modalities: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { batch: 16, d_raw: 8, d: 4, margin: 3.0, sigma: 1.0, modalities: 3, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::InvalidParameter(format!("batch must be >= 2, got {}", self.batch)));
        }
        if self.d == 0 || self.d > self.d_raw {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= d <= d_raw, got d={} and d_raw={}",
                self.d, self.d_raw
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParameter(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.modalities == 0 {
            return Err(Error::InvalidParameter("need at least one modality".into()));
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        if self.modalities == TRIPLET_NAMES.len() {
            TRIPLET_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.modalities).map(|s| format!("m{s}")).collect()
        }
    }
}

/// A generated batch: raw views and the latents behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBatch {
    pub latents: Array2<f64>,
    pub views: ModalityBatch,
}

/// The generative task: a `SyntheticSpec` plus its fixed `d_raw x d` mixing matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    pub mixing: Vec<Array2<f64>>,
}

/// `rows x cols` matrix with orthonormal columns (`cols <= rows`).
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let mut q: Array2<f64> = Array2::from_shape_fn((rows, cols), |_| normal.sample(rng));
        let mut ok = true;
        // Modified Gram-Schmidt over columns.
        for j in 0..cols {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let ci = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &ci);
            }
            let norm: f64 = q.column(j).dot(&q.column(j));
            let norm = norm.sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

impl SyntheticTask {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
        let mixing = (0..spec.modalities).map(|_| orthonormal_columns(spec.d_raw, spec.d, &mut rng)).collect();
        Ok(Self { spec, mixing })
    }

    /// Batch `index`; index 0 is the training batch, others are held out.
    pub fn batch(&self, index: u64) -> Result<SyntheticBatch> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index.wrapping_add(1)));
        let latents = sample_latents(spec, &mut rng)?;
        let mut views = Vec::with_capacity(spec.modalities);
        for m in &self.mixing {
            let mut x = latents.dot(&m.t());
            if spec.sigma > 0.0 {
                let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Generation(e.to_string()))?;
                x.mapv_inplace(|v| v + noise.sample(&mut rng));
            }
            views.push(EmbeddingMatrix::new(x)?);
        }
        Ok(SyntheticBatch { latents, views: ModalityBatch::new(spec.names(), views)? })
    }
}

fn sample_latents(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let normal = Normal::new(0.0, spec.margin).map_err(|e| Error::Generation(e.to_string()))?;
    let mut accepted: Vec<Array1<f64>> = Vec::with_capacity(spec.batch);
    let budget = ATTEMPTS_PER_LATENT * spec.batch;
    let mut attempts = 0;
    while accepted.len() < spec.batch {
        if attempts == budget {
            return Err(Error::Generation(format!(
                "placed only {} of {} latents at separation {} in dimension {} after {budget} draws",
                accepted.len(),
                spec.batch,
                spec.margin,
                spec.d
            )));
        }
        attempts += 1;
        let z: Array1<f64> = (0..spec.d).map(|_| normal.sample(rng)).collect();
        let far = accepted.iter().all(|a| {
            let diff = a - &z;
            diff.dot(&diff).sqrt() >= spec.margin
        });
        if far {
            accepted.push(z);
        }
    }
    let mut out = Array2::zeros((spec.batch, spec.d));
    for (k, z) in accepted.into_iter().enumerate() {
        out.row_mut(k).assign(&z);
    }
    Ok(out)
}

/// Training batch (index 0) of a fresh task.
pub fn generate_synthetic_triplets(spec: &SyntheticSpec) -> Result<SyntheticBatch> {
    SyntheticTask::new(spec.clone())?.batch(0)
}

/// Uniform draw helper shared with encoder initialization.
pub(crate) fn uniform_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}
