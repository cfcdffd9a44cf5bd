//! End-to-end training of per-modality linear encoders through the discrete
//! multi-alignment, with IMLE supplying the gradient of the Hamming loss.
//!
//! One step on a batch: encode, (optionally) propagate, build graphs and the
//! barycenter, solve, score the Hamming loss, estimate `dL/dA^v_s` per
//! modality, chain it through the vertex affinities into the encoders, add
//! the reconstruction-surrogate gradient and take a plain gradient step.

mod encoder;
mod synthetic;

pub use encoder::{
    affinity_param_gradient, distance_gradient, vertex_affinities, vertex_affinity_backward, EncoderSet, LinearMap,
};
pub use synthetic::{generate_synthetic_triplets, SyntheticBatch, SyntheticSpec, SyntheticTask};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Metric, DEFAULT_K};
use crate::imle::{derive_seed, estimate_gradients, ImleConfig};
use crate::multi::{
    build_problem, ground_truth, hamming_loss, solve_problem, AlignOptions, ModalityBatch, MultiMatching,
};
use crate::propagate::PropagationConfig;
use crate::solver::{Matching, Solver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the alignment (Hamming) gradient.
    pub alpha: f64,
    /// Weight of the reconstruction-surrogate gradient.
    pub surrogate_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub imle: ImleConfig,
    pub k: usize,
    pub metric: Metric,
    pub propagation: Option<PropagationConfig>,
    pub solver: Solver,
}

/// Defaults tuned on the B=16, d_raw=8, d=4 synthetic task.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            surrogate_weight: 2.0,
            learning_rate: 0.15,
            epochs: 50,
            imle: ImleConfig { noise_scale: 3.0, ..ImleConfig::default() },
            k: DEFAULT_K,
            metric: Metric::Euclidean,
            propagation: None,
            solver: Solver::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.surrogate_weight >= 0.0 && self.surrogate_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "surrogate_weight must be >= 0, got {}",
                self.surrogate_weight
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if let Some(p) = &self.propagation {
            p.validate()?;
        }
        self.imle.validate()
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions { k: self.k, metric: self.metric, propagation: self.propagation.clone() }
    }
}

/// One row of the loss trace, measured before the update of that epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub batch: usize,
    pub hamming: f64,
    pub surrogate: f64,
    pub accuracy: f64,
}

/// Training state that can be resumed. The noise of epoch `e`, modality `s`
/// comes from stream `e * K + s` of `config.imle.seed`, so `epoch` is the
/// whole generator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub rng_seed: u64,
    pub config: TrainConfig,
    pub encoders: EncoderSet,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub encoders: EncoderSet,
    pub trace: Vec<TraceRow>,
    pub checkpoint: Checkpoint,
}

/// Fraction of records whose modalities are all matched to their own index.
pub fn record_accuracy(predicted: &MultiMatching) -> f64 {
    let n = predicted.0.first().map_or(0, Matching::len);
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n).filter(|&k| predicted.0.iter().all(|m| m.sigma()[k] == k)).count();
    hits as f64 / n as f64
}

/// Matching accuracy of `enc` on a raw batch with positional ground truth.
pub fn evaluate_matching(raw: &ModalityBatch, enc: &EncoderSet, opts: &AlignOptions, solver: &Solver) -> Result<f64> {
    let problem = build_problem(&enc.encode(raw)?, opts)?;
    let reports = solve_problem(&problem, solver)?;
    Ok(record_accuracy(&MultiMatching(reports.into_iter().map(|r| r.sigma).collect())))
}

/// Mean and (population) standard deviation of several accuracies.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Random encoders whose accuracy on `raw` is below `ceiling`, drawn from
/// successive streams of `seed`.
pub fn adversarial_init(
    raw: &ModalityBatch,
    d: usize,
    opts: &AlignOptions,
    solver: &Solver,
    seed: u64,
    ceiling: f64,
) -> Result<EncoderSet> {
    const MAX_DRAWS: u64 = 1000;
    for stream in 0..MAX_DRAWS {
        let enc = EncoderSet::random(raw.modality_count(), raw.dim(), d, derive_seed(seed, stream));
        if evaluate_matching(raw, &enc, opts, solver)? < ceiling {
            return Ok(enc);
        }
    }
    Err(Error::InvalidParameter(format!("no random encoder scored below {ceiling} in {MAX_DRAWS} draws")))
}

/// One gradient evaluation: trace values and the full parameter gradient.
pub fn training_step(
    raw: &ModalityBatch,
    enc: &EncoderSet,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(TraceRow, EncoderSet)> {
    let opts = cfg.align_options();
    let problem = build_problem(&enc.encode(raw)?, &opts)?;
    let reports = solve_problem(&problem, &cfg.solver)?;
    let predicted = MultiMatching(reports.into_iter().map(|r| r.sigma).collect());
    let truth = ground_truth(raw);
    let row = TraceRow {
        epoch,
        batch: 0,
        hamming: hamming_loss(&predicted, &truth)?,
        surrogate: enc.reconstruction_loss(raw)?,
        accuracy: record_accuracy(&predicted),
    };

    let mut grad = enc.zeros_like();
    if cfg.alpha > 0.0 && cfg.imle.lambda > 0.0 {
        let k = raw.modality_count();
        let upstream = problem
            .affinities
            .iter()
            .zip(truth.matchings())
            .enumerate()
            .map(|(s, (aff, t))| {
                let stream = cfg.imle.with_stream((epoch * k + s) as u64);
                Ok(estimate_gradients(aff, t, &stream, &cfg.solver)?.vertex)
            })
            .collect::<Result<Vec<Array2<f64>>>>()?;
        let dz = vertex_affinity_backward(&problem, cfg.metric, &upstream)?;
        let align = {
            let mut g = enc.zeros_like();
            for (s, dz) in dz.iter().enumerate() {
                let x = raw.views()[s].view().to_owned();
                g.encoders[s] = LinearMap { weight: dz.t().dot(&x), bias: dz.sum_axis(ndarray::Axis(0)) };
            }
            g
        };
        grad.axpy(cfg.alpha, &align);
    }
    if cfg.surrogate_weight > 0.0 {
        grad.axpy(cfg.surrogate_weight, &enc.reconstruction_gradient(raw)?);
    }
    Ok((row, grad))
}

/// Full-batch gradient descent for `cfg.epochs` epochs starting at
/// `start_epoch`.
pub fn train_from(
    raw: &ModalityBatch,
    init: EncoderSet,
    cfg: &TrainConfig,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut enc = init;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in start_epoch..start_epoch + cfg.epochs {
        // Parameters are finite here, so any overflow downstream is divergence.
        let (row, grad) = training_step(raw, &enc, cfg, epoch).map_err(|e| match e {
            Error::NonFinite(_) => Error::TrainingDiverged { epoch },
            other => other,
        })?;
        trace.push(row);
        enc.axpy(-cfg.learning_rate, &grad);
        if !enc.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    let checkpoint = Checkpoint {
        epoch: start_epoch + cfg.epochs,
        rng_seed: cfg.imle.seed,
        config: cfg.clone(),
        encoders: enc.clone(),
    };
    Ok(TrainOutcome { encoders: enc, trace, checkpoint })
}

pub fn train(raw: &ModalityBatch, init: EncoderSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(raw, init, cfg, 0)
}
