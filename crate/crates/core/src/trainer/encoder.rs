//! Linear per-modality encoders and the analytic gradient path from vertex
//! affinities back to encoder parameters.
//!
//! Forward: `Z_s = X_s W_s^T + b_s`, optionally `Z'_s = T_s Z_s`, barycenter
//! `C = mean_s Z'_s`, and `A^v_s[i, j] = d(Z'_s[i], C[j])`. Graph topology
//! (k-NN edges, hop counts, propagation operators) is piecewise constant in
//! the parameters and is held fixed when differentiating.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EmbeddingMatrix, Metric, NodeStructure};
use crate::multi::{build_problem, AlignOptions, AlignmentProblem, ModalityBatch};

use super::synthetic::uniform_matrix;

/// `x -> W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearMap {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn axpy(&mut self, alpha: f64, g: &LinearMap) {
        self.weight.scaled_add(alpha, &g.weight);
        self.bias.scaled_add(alpha, &g.bias);
    }

    fn dot(&self, other: &LinearMap) -> f64 {
        (&self.weight * &other.weight).sum() + self.bias.dot(&other.bias)
    }

    /// Parameter gradient of `sum <dY, X W^T + b>` for upstream `dY`.
    fn backward(x: &Array2<f64>, dy: &Array2<f64>) -> LinearMap {
        LinearMap { weight: dy.t().dot(x), bias: dy.sum_axis(Axis(0)) }
    }
}

/// One linear encoder per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSet {
    pub encoders: Vec<LinearMap>,
}

/// Ridge added to the decoder normal equations, per record.
const DECODER_RIDGE: f64 = 1e-8;

/// Solves the SPD system `a x = b` (columns of `b`) by Cholesky.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                let d = a[[i, i]] - s;
                if d.is_nan() || d <= 0.0 {
                    return Err(Error::NonFinite("decoder normal equations"));
                }
                l[[i, i]] = d.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[[i, k]] * col[k]).sum();
            col[i] = (col[i] - s) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| l[[k, i]] * col[k]).sum();
            col[i] = (col[i] - s) / l[[i, i]];
        }
    }
    Ok(x)
}

/// Best linear decoder `[Z 1] D ~ X` under a small ridge, and its residual
/// `X - [Z 1] D`. `D` has `d + 1` rows, the last one being the bias.
fn optimal_decoder(z: &Array2<f64>, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (b, d) = z.dim();
    let mut aug = Array2::<f64>::ones((b, d + 1));
    aug.slice_mut(ndarray::s![.., ..d]).assign(z);
    let mut gram = aug.t().dot(&aug);
    let ridge = DECODER_RIDGE * b as f64;
    for i in 0..=d {
        gram[[i, i]] += ridge;
    }
    let dec = cholesky_solve(&gram, &aug.t().dot(x))?;
    let resid = x - &aug.dot(&dec);
    Ok((dec, resid))
}

impl EncoderSet {
    /// Uniform `(-1/sqrt(d_raw), 1/sqrt(d_raw))` weights, zero biases.
    pub fn random(modalities: usize, d_raw: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_raw as f64).sqrt();
        let encoders = (0..modalities)
            .map(|_| LinearMap { weight: uniform_matrix(d, d_raw, scale, &mut rng), bias: Array1::zeros(d) })
            .collect();
        Self { encoders }
    }

    /// Encoders `W_s` given explicitly, with zero biases.
    pub fn from_weights(weights: Vec<Array2<f64>>) -> Result<Self> {
        let first = weights.first().ok_or(Error::EmptyInput)?;
        let (d, d_raw) = first.dim();
        if weights.iter().any(|w| w.dim() != (d, d_raw)) {
            return Err(Error::shape("encoder weights differ in shape"));
        }
        let encoders = weights.into_iter().map(|weight| LinearMap { weight, bias: Array1::zeros(d) }).collect();
        Ok(Self { encoders })
    }

    pub fn modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_finite(&self) -> bool {
        self.encoders.iter().all(LinearMap::is_finite)
    }

    pub fn zeros_like(&self) -> Self {
        Self { encoders: self.encoders.iter().map(|m| LinearMap::zeros(m.out_dim(), m.in_dim())).collect() }
    }

    /// `self += alpha * g`.
    pub fn axpy(&mut self, alpha: f64, g: &EncoderSet) {
        for (p, q) in self.encoders.iter_mut().zip(&g.encoders) {
            p.axpy(alpha, q);
        }
    }

    /// Inner product over all parameters.
    pub fn dot(&self, other: &EncoderSet) -> f64 {
        self.encoders.iter().zip(&other.encoders).map(|(a, b)| a.dot(b)).sum()
    }

    fn check(&self, raw: &ModalityBatch) -> Result<()> {
        if self.modalities() != raw.modality_count() {
            return Err(Error::shape(format!(
                "{} encoders for {} modalities",
                self.modalities(),
                raw.modality_count()
            )));
        }
        if self.encoders.iter().any(|e| e.in_dim() != raw.dim() || e.bias.len() != e.out_dim()) {
            return Err(Error::shape("encoder shapes do not match the raw views"));
        }
        Ok(())
    }

    /// Encoded views `Z_s`.
    pub fn encode(&self, raw: &ModalityBatch) -> Result<ModalityBatch> {
        self.check(raw)?;
        let views = self
            .encoders
            .iter()
            .zip(raw.views())
            .map(|(e, x)| EmbeddingMatrix::new(e.apply(&x.view().to_owned())))
            .collect::<Result<Vec<_>>>()?;
        ModalityBatch::new(raw.names().to_vec(), views)
    }

    /// Reconstruction surrogate: for each modality, the ridge least-squares
    /// error of decoding the raw view linearly from its encoding, averaged
    /// over all entries. The decoder is solved in closed form, so the loss is
    /// a function of the encoders alone and invariant to their scale (up to
    /// the ridge).
    pub fn reconstruction_loss(&self, raw: &ModalityBatch) -> Result<f64> {
        let encoded = self.encode(raw)?;
        let mut total = 0.0;
        for (z, x) in encoded.views().iter().zip(raw.views()) {
            let (dec, resid) = optimal_decoder(&z.view().to_owned(), &x.view().to_owned())?;
            total += resid.mapv(|v| v * v).sum() + DECODER_RIDGE * raw.size() as f64 * dec.mapv(|v| v * v).sum();
        }
        Ok(total / (raw.modality_count() * raw.size() * raw.dim()) as f64)
    }

    /// Gradient of [`Self::reconstruction_loss`]. The decoder is optimal, so
    /// only the explicit dependence on `Z` contributes: `dZ = -2 R D_w^T / N`.
    pub fn reconstruction_gradient(&self, raw: &ModalityBatch) -> Result<EncoderSet> {
        let encoded = self.encode(raw)?;
        let scale = 2.0 / (raw.modality_count() * raw.size() * raw.dim()) as f64;
        let mut grad = self.zeros_like();
        for s in 0..self.modalities() {
            let x = raw.views()[s].view().to_owned();
            let z = encoded.views()[s].view().to_owned();
            let (dec, resid) = optimal_decoder(&z, &x)?;
            let d = z.ncols();
            let dz = resid.dot(&dec.slice(ndarray::s![..d, ..]).t()) * (-scale);
            grad.encoders[s] = LinearMap::backward(&x, &dz);
        }
        Ok(grad)
    }
}

/// Gradient of `d(x, c)` with respect to `x`; by symmetry the gradient with
/// respect to `c` is obtained by swapping the arguments. Zero where the
/// distance is not differentiable (coincident points, clamped cosine).
pub fn distance_gradient(
    metric: Metric,
    x: ndarray::ArrayView1<'_, f64>,
    c: ndarray::ArrayView1<'_, f64>,
) -> Array1<f64> {
    match metric {
        Metric::Euclidean => {
            let diff = &x - &c;
            let norm = diff.dot(&diff).sqrt();
            if norm == 0.0 {
                Array1::zeros(x.len())
            } else {
                diff / norm
            }
        }
        Metric::Cosine => {
            let nx = x.dot(&x).sqrt();
            let nc = c.dot(&c).sqrt();
            if nx == 0.0 || nc == 0.0 {
                return Array1::zeros(x.len());
            }
            let cos = x.dot(&c) / (nx * nc);
            if cos >= 1.0 || cos <= -1.0 {
                return Array1::zeros(x.len());
            }
            // d = 1 - cos;  d cos / dx = c / (|x||c|) - cos x / |x|^2.
            (&x * (cos / (nx * nx))) - &(&c / (nx * nc))
        }
    }
}

/// Back-propagates upstream vertex-affinity gradients `dA_s` (one per
/// modality, `B x B`) to the encoded views `Z_s`, through the distance, the
/// barycenter mean and the propagation operators of `problem`.
pub fn vertex_affinity_backward(
    problem: &AlignmentProblem,
    metric: Metric,
    upstream: &[Array2<f64>],
) -> Result<Vec<Array2<f64>>> {
    let k = problem.graphs.len();
    if upstream.len() != k {
        return Err(Error::shape(format!("{} upstream gradients for {k} modalities", upstream.len())));
    }
    let c = problem.barycenter.features();
    let (n, dim) = c.dim();
    let mut dc = Array2::<f64>::zeros((n, dim));
    let mut dzp: Vec<Array2<f64>> = Vec::with_capacity(k);
    for (g, up) in problem.graphs.iter().zip(upstream) {
        if up.dim() != (n, n) {
            return Err(Error::shape("upstream gradient has the wrong shape"));
        }
        let z = g.features();
        let mut dz = Array2::<f64>::zeros((n, dim));
        for i in 0..n {
            for j in 0..n {
                let w = up[[i, j]];
                if w == 0.0 {
                    continue;
                }
                let gx = distance_gradient(metric, z.row(i), c.row(j));
                let gc = distance_gradient(metric, c.row(j), z.row(i));
                dz.row_mut(i).scaled_add(w, &gx);
                dc.row_mut(j).scaled_add(w, &gc);
            }
        }
        dzp.push(dz);
    }
    dc /= k as f64;
    for (s, dz) in dzp.iter_mut().enumerate() {
        *dz += &dc;
        if let Some(ops) = &problem.operators {
            *dz = ops[s].t().dot(dz);
        }
    }
    Ok(dzp)
}

/// Vertex affinities `A^v_s` of encoded data, one per modality.
pub fn vertex_affinities(
    raw: &ModalityBatch,
    enc: &EncoderSet,
    opts: &AlignOptions,
) -> Result<(AlignmentProblem, Vec<Array2<f64>>)> {
    let problem = build_problem(&enc.encode(raw)?, opts)?;
    let vs = problem.affinities.iter().map(|a| a.vertex.clone()).collect();
    Ok((problem, vs))
}

/// Parameter gradient of `sum_s <dA_s, A^v_s(theta)>`.
pub fn affinity_param_gradient(
    raw: &ModalityBatch,
    enc: &EncoderSet,
    opts: &AlignOptions,
    upstream: &[Array2<f64>],
) -> Result<EncoderSet> {
    let (problem, _) = vertex_affinities(raw, enc, opts)?;
    let dz = vertex_affinity_backward(&problem, opts.metric, upstream)?;
    let mut grad = enc.zeros_like();
    for (s, dz) in dz.iter().enumerate() {
        grad.encoders[s] = LinearMap::backward(&raw.views()[s].view().to_owned(), dz);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagate::PropagationConfig;
    use crate::trainer::synthetic::{generate_synthetic_triplets, SyntheticSpec};
    use rand::Rng;

    fn objective(raw: &ModalityBatch, enc: &EncoderSet, opts: &AlignOptions, up: &[Array2<f64>]) -> f64 {
        let (_, vs) = vertex_affinities(raw, enc, opts).unwrap();
        vs.iter().zip(up).map(|(v, u)| (v * u).sum()).sum()
    }

    fn fd_check(metric: Metric, propagation: Option<PropagationConfig>, seed: u64) {
        let spec = SyntheticSpec { batch: 6, seed, ..Default::default() };
        let raw = generate_synthetic_triplets(&spec).unwrap().views;
        let enc = EncoderSet::random(3, spec.d_raw, spec.d, seed);
        let opts = AlignOptions { k: 2, metric, propagation };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let up: Vec<_> = (0..3).map(|_| uniform_matrix(6, 6, 1.0, &mut rng)).collect();
        let mut dir = enc.zeros_like();
        for e in &mut dir.encoders {
            e.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            e.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let analytic = affinity_param_gradient(&raw, &enc, &opts, &up).unwrap().dot(&dir);
        let h = 1e-6;
        let (mut plus, mut minus) = (enc.clone(), enc.clone());
        plus.axpy(h, &dir);
        minus.axpy(-h, &dir);
        let fd = (objective(&raw, &plus, &opts, &up) - objective(&raw, &minus, &opts, &up)) / (2.0 * h);
        assert!((analytic - fd).abs() <= 1e-4 * analytic.abs().max(fd.abs()), "{analytic} vs {fd}");
    }

    #[test]
    fn affinity_gradient_matches_finite_differences() {
        for seed in 0..4 {
            fd_check(Metric::Euclidean, None, seed);
            fd_check(Metric::Cosine, None, seed);
            fd_check(Metric::Euclidean, Some(PropagationConfig::default()), seed);
            fd_check(Metric::Cosine, Some(PropagationConfig::default()), seed);
        }
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences() {
        let spec = SyntheticSpec { batch: 5, seed: 3, ..Default::default() };
        let raw = generate_synthetic_triplets(&spec).unwrap().views;
        let enc = EncoderSet::random(3, spec.d_raw, spec.d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut dir = enc.zeros_like();
        for m in dir.encoders.iter_mut() {
            m.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            m.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let analytic = enc.reconstruction_gradient(&raw).unwrap().dot(&dir);
        let h = 1e-6;
        let (mut p, mut m) = (enc.clone(), enc.clone());
        p.axpy(h, &dir);
        m.axpy(-h, &dir);
        let fd = (p.reconstruction_loss(&raw).unwrap() - m.reconstruction_loss(&raw).unwrap()) / (2.0 * h);
        assert!((analytic - fd).abs() <= 1e-6 * analytic.abs().max(fd.abs()), "{analytic} vs {fd}");
    }

    #[test]
    fn reconstruction_loss_ignores_encoder_scale() {
        let spec = SyntheticSpec { batch: 8, seed: 5, ..Default::default() };
        let raw = generate_synthetic_triplets(&spec).unwrap().views;
        let enc = EncoderSet::random(3, spec.d_raw, spec.d, 4);
        let mut big = enc.clone();
        big.axpy(9.0, &enc);
        let (a, b) = (enc.reconstruction_loss(&raw).unwrap(), big.reconstruction_loss(&raw).unwrap());
        assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
    }

    #[test]
    fn cholesky_solves_known_system() {
        let a = ndarray::array![[4.0, 2.0], [2.0, 3.0]];
        let b = ndarray::array![[2.0], [1.0]];
        let x = cholesky_solve(&a, &b).unwrap();
        assert!((a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-12));
        assert!(cholesky_solve(&ndarray::array![[0.0]], &ndarray::array![[1.0]]).is_err());
    }

    #[test]
    fn distance_gradient_degenerate_points() {
        let x = ndarray::array![1.0, 2.0];
        assert_eq!(distance_gradient(Metric::Euclidean, x.view(), x.view()), ndarray::array![0.0, 0.0]);
        let g =
            distance_gradient(Metric::Euclidean, ndarray::array![3.0, 4.0].view(), ndarray::array![0.0, 0.0].view());
        assert_eq!(g, ndarray::array![0.6, 0.8]);
    }

    #[test]
    fn shape_errors() {
        let spec = SyntheticSpec { batch: 4, ..Default::default() };
        let raw = generate_synthetic_triplets(&spec).unwrap().views;
        let enc = EncoderSet::random(2, spec.d_raw, spec.d, 0);
        assert!(matches!(enc.encode(&raw), Err(Error::Shape(_))));
        let enc = EncoderSet::random(3, spec.d_raw + 1, spec.d, 0);
        assert!(matches!(enc.encode(&raw), Err(Error::Shape(_))));
    }
}
