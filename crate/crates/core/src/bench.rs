//! Scaling benchmark: barycenter alignment (K solves) against direct pairwise
//! alignment (K(K-1)/2 solves) on synthetic batches.
//!
//! Modalities share one mixing frame so raw features are directly comparable;
//! accuracy is the fraction of records every matching maps to themselves.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Metric, DEFAULT_K};
use crate::imle::derive_seed;
use crate::multi::{solve_multi, solve_pairwise, AlignOptions};
use crate::solver::{HeuristicConfig, Solver};
use crate::trainer::{record_accuracy, SyntheticSpec, SyntheticTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub modalities: Vec<usize>,
    pub batches: Vec<usize>,
    pub dim: usize,
    pub margin: f64,
    pub sigma: f64,
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            modalities: vec![3, 4, 5, 6],
            batches: vec![8, 16, 32, 64],
            dim: 8,
            margin: 3.0,
            sigma: 1.0,
            k: DEFAULT_K,
            metric: Metric::Euclidean,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub modalities: usize,
    pub batch: usize,
    pub barycenter_solves: usize,
    pub pairwise_solves: usize,
    pub barycenter_seconds: f64,
    pub pairwise_seconds: f64,
    pub barycenter_accuracy: f64,
    pub pairwise_accuracy: f64,
}

impl BenchRow {
    pub fn time_ratio(&self) -> f64 {
        self.pairwise_seconds / self.barycenter_seconds
    }
}

/// Fraction of records that every pairwise matching fixes.
fn pairwise_accuracy(pairs: &[(usize, usize, crate::solver::SolveReport)], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n).filter(|&i| pairs.iter().all(|p| p.2.sigma.sigma()[i] == i)).count();
    hits as f64 / n as f64
}

/// One row for `modalities` views of a `batch`-record synthetic batch.
pub fn bench_case(cfg: &BenchConfig, modalities: usize, batch: usize) -> Result<BenchRow> {
    let case_seed = derive_seed(cfg.seed, ((modalities as u64) << 32) | batch as u64);
    let spec = SyntheticSpec {
        batch,
        d_raw: cfg.dim,
        d: cfg.dim,
        margin: cfg.margin,
        sigma: cfg.sigma,
        modalities,
        seed: case_seed,
    };
    let mut task = SyntheticTask::new(spec)?;
    task.mixing = vec![task.mixing[0].clone(); modalities];
    let views = task.batch(0)?.views;
    let opts = AlignOptions::new(cfg.k.min(batch - 1), cfg.metric);
    let solver = Solver::Heuristic(HeuristicConfig { seed: case_seed, ..Default::default() });

    let t0 = Instant::now();
    let bary = solve_multi(&views, &opts, &solver)?;
    let barycenter_seconds = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let pair = solve_pairwise(&views, &opts, &solver)?;
    let pairwise_seconds = t0.elapsed().as_secs_f64();

    let row = BenchRow {
        modalities,
        batch,
        barycenter_solves: bary.reports.len(),
        pairwise_solves: pair.pairs.len(),
        barycenter_seconds,
        pairwise_seconds,
        barycenter_accuracy: record_accuracy(&bary.matchings()),
        pairwise_accuracy: pairwise_accuracy(&pair.pairs, batch),
    };
    if row.barycenter_solves != modalities || row.pairwise_solves != modalities * (modalities - 1) / 2 {
        return Err(Error::InvalidParameter(format!(
            "solve counts {} / {} do not match K={modalities}",
            row.barycenter_solves, row.pairwise_solves
        )));
    }
    Ok(row)
}

/// Every `(K, B)` combination of the config, K outer.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.modalities.iter().any(|&k| k < 2) {
        return Err(Error::InvalidParameter("need at least two modalities".into()));
    }
    if cfg.batches.iter().any(|&b| b < 2) {
        return Err(Error::InvalidParameter("batch must be >= 2".into()));
    }
    let mut rows = Vec::new();
    for &k in &cfg.modalities {
        for &b in &cfg.batches {
            rows.push(bench_case(cfg, k, b)?);
        }
    }
    Ok(rows)
}
