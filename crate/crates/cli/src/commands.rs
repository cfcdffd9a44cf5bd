//! Subcommand implementations.

use std::io::BufReader;
use std::path::PathBuf;

use mgalign::imle::derive_seed;
use mgalign::io::{parse_embeddings, read_triplets_jsonl};
use mgalign::metric::verify_metric_axioms_with;
use mgalign::trainer::{
    adversarial_init, evaluate_matching, mean_std, train_from, Checkpoint, EncoderSet, SyntheticSpec, SyntheticTask,
    TrainConfig,
};
use mgalign::{
    d_sga, knn_clamped, run_bench, solve_multi, solve_pairwise, verify_geodesics, verify_metric_axioms, AffinityPair,
    AlignOptions, BenchConfig, ImleConfig, InstanceSampler, Metric, MetricReport, MultiMatching, NodeStructure,
    SolveReport, StructuredGraph,
};
use serde::Serialize;
use serde_json::json;

use crate::manifest::Run;
use crate::{AlignArgs, BenchArgs, Failure, Mode, MultiAlignArgs, TrainArgs, VerifyArgs, EXIT_VERIFY};

/// Interpolation times checked along each geodesic.
const GEODESIC_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Serialize)]
struct AlignOutput {
    /// Neighbor count actually used (`--k` clamped to `n - 1`).
    k: usize,
    #[serde(flatten)]
    report: SolveReport,
}

pub fn align(a: AlignArgs) -> Result<(), Failure> {
    let metric = Metric::from(a.metric);
    let solver = a.solver.build(a.seed);
    let config = json!({ "k": a.k, "metric": metric, "solver": &solver });
    let mut run = Run::new("align", a.seed, &config, &a.out)?;
    let left = parse_embeddings(&run.read_input(&a.left)?)?;
    let right = parse_embeddings(&run.read_input(&a.right)?)?;
    let k = a.k.min(left.rows().saturating_sub(1));
    let g1 = knn_clamped(left, a.k, metric)?;
    let g2 = knn_clamped(right, a.k, metric)?;
    let aff = AffinityPair::between(&g1, &g2, metric)?;
    let report = solver.solve(&aff)?;
    println!("objective {} over {} nodes ({:?})", report.objective, report.n, report.method);
    run.write_json(&a.out, &AlignOutput { k, report })?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct BarycenterOutput<'a> {
    mode: &'static str,
    ids: &'a [String],
    modalities: &'a [String],
    matchings: MultiMatching,
    reports: &'a [SolveReport],
    total_objective: f64,
    /// Sorted record tuples matched to the same barycenter node.
    triplets: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct PairwiseOutput<'a> {
    mode: &'static str,
    ids: &'a [String],
    modalities: &'a [String],
    pairs: &'a [(usize, usize, SolveReport)],
    total_objective: f64,
    /// Sorted record tuples induced through the first modality.
    triplets: Vec<Vec<usize>>,
}

pub fn multi_align(a: MultiAlignArgs) -> Result<(), Failure> {
    let opts = AlignOptions::new(a.k, a.metric.into());
    let solver = a.solver.build(a.seed);
    let mode = match a.mode {
        Mode::Barycenter => "barycenter",
        Mode::Pairwise => "pairwise",
    };
    let config = json!({ "mode": mode, "align": &opts, "solver": &solver });
    let mut run = Run::new("multi-align", a.seed, &config, &a.out)?;
    let bytes = run.read_input(&a.input)?;
    let (ids, batch) = read_triplets_jsonl(BufReader::new(bytes.as_slice()))?;
    match a.mode {
        Mode::Barycenter => {
            let r = solve_multi(&batch, &opts, &solver)?;
            let matchings = r.matchings();
            let out = BarycenterOutput {
                mode,
                ids: &ids,
                modalities: &r.modalities,
                triplets: matchings.triplets(),
                matchings,
                reports: &r.reports,
                total_objective: r.total_objective,
            };
            println!("{} records, {} solves, total objective {}", ids.len(), r.reports.len(), r.total_objective);
            run.write_json(&a.out, &out)?;
        }
        Mode::Pairwise => {
            let r = solve_pairwise(&batch, &opts, &solver)?;
            let out = PairwiseOutput {
                mode,
                ids: &ids,
                modalities: &r.modalities,
                pairs: &r.pairs,
                total_objective: r.total_objective,
                triplets: r.triplets(),
            };
            println!("{} records, {} solves, total objective {}", ids.len(), r.pairs.len(), r.total_objective);
            run.write_json(&a.out, &out)?;
        }
    }
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyOutput {
    passed: bool,
    n: usize,
    metric: Metric,
    grid: Vec<f64>,
    axioms: MetricReport,
    geodesic: MetricReport,
}

/// Distance that is deliberately asymmetric whenever it is nonzero.
fn asymmetric_mutant(a: &StructuredGraph, b: &StructuredGraph) -> mgalign::Result<f64> {
    let d = d_sga(a, b, Metric::Euclidean)?;
    Ok(if a.features()[[0, 0]] < b.features()[[0, 0]] { 2.0 * d } else { d })
}

pub fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let geodesic_trials = a.geodesic_trials.unwrap_or(a.trials);
    let config = json!({
        "trials": a.trials,
        "geodesic_trials": geodesic_trials,
        "n": a.n,
        "metric": Metric::Euclidean,
        "grid": GEODESIC_GRID,
        "mutant": a.mutant,
    });
    let mut run = Run::new("verify", a.seed, &config, &a.out)?;
    let mut axiom_graphs = InstanceSampler::new(a.n, derive_seed(a.seed, 0))?;
    let mut geodesic_graphs = InstanceSampler::new(a.n, derive_seed(a.seed, 1))?;
    let axioms = if a.mutant {
        verify_metric_axioms_with(|i| axiom_graphs.sample(i), a.trials, &asymmetric_mutant)?
    } else {
        verify_metric_axioms(|i| axiom_graphs.sample(i), a.trials, Metric::Euclidean)?
    };
    let geodesic = verify_geodesics(|i| geodesic_graphs.sample(i), geodesic_trials, &GEODESIC_GRID)?;
    let passed = axioms.passed() && geodesic.passed();
    println!(
        "{} axiom trials, {} violations, {} isomorphic pairs; {} geodesic trials, {} violations",
        axioms.trials,
        axioms.violations.len(),
        axioms.isomorphic.len(),
        geodesic.trials,
        geodesic.violations.len()
    );
    run.set_summary(&json!({ "passed": passed }))?;
    let out =
        VerifyOutput { passed, n: a.n, metric: Metric::Euclidean, grid: GEODESIC_GRID.to_vec(), axioms, geodesic };
    run.write_json(&a.out, &out)?;
    run.finish()?;
    if passed {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VERIFY, message: "verification found violations".into() })
    }
}

#[derive(Serialize)]
struct TrainSummary {
    start_epoch: usize,
    end_epoch: usize,
    initial_accuracy: f64,
    final_accuracy: f64,
    heldout: Vec<f64>,
    heldout_mean: Option<f64>,
    heldout_std: Option<f64>,
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        alpha: a.alpha.unwrap_or(d.alpha),
        surrogate_weight: a.surrogate_weight.unwrap_or(d.surrogate_weight),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        epochs: a.epochs.unwrap_or(d.epochs),
        imle: ImleConfig {
            lambda: a.lambda.unwrap_or(d.imle.lambda),
            noise_scale: a.noise_scale.unwrap_or(d.imle.noise_scale),
            samples: a.samples.unwrap_or(d.imle.samples),
            seed: a.seed,
        },
        k: a.k,
        metric: a.metric.into(),
        propagation: None,
        solver: a.solver.build(a.seed),
    };
    let spec = SyntheticSpec {
        batch: a.batch,
        d_raw: a.d_raw,
        d: a.d,
        margin: a.margin,
        sigma: a.sigma,
        modalities: 3,
        seed: a.seed,
    };
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".trace.csv");
        PathBuf::from(s)
    });

    let mut run_config = json!({ "data": a.data.as_ref().map(|p| p.display().to_string()) });
    let mut run = Run::new("train", a.seed, &json!(null), &a.out)?;

    let (raw, task) = match &a.data {
        Some(path) => {
            let bytes = run.read_input(path)?;
            (read_triplets_jsonl(BufReader::new(bytes.as_slice()))?.1, None)
        }
        None => {
            let task = SyntheticTask::new(spec.clone())?;
            run_config["synthetic"] = serde_json::to_value(&spec).map_err(Failure::internal)?;
            (task.batch(0)?.views, Some(task))
        }
    };

    let (init, start_epoch) = match &a.resume {
        Some(path) => {
            let bytes = run.read_input(path)?;
            let text = String::from_utf8(bytes).map_err(|e| Failure::input(format!("checkpoint: {e}")))?;
            let ckpt = Checkpoint::from_json(&text)?;
            let epochs = a.epochs.unwrap_or(ckpt.config.epochs);
            cfg = TrainConfig { epochs, ..ckpt.config };
            (ckpt.encoders, ckpt.epoch)
        }
        None if a.adversarial => (adversarial_init(&raw, a.d, &cfg.align_options(), &cfg.solver, a.seed, 0.5)?, 0),
        None => (EncoderSet::random(raw.modality_count(), raw.dim(), a.d, a.seed), 0),
    };
    run_config["train"] = serde_json::to_value(&cfg).map_err(Failure::internal)?;
    run_config["adversarial"] = json!(a.adversarial && a.resume.is_none());
    run.set_config(run_config);

    let opts = cfg.align_options();
    let initial_accuracy = evaluate_matching(&raw, &init, &opts, &cfg.solver)?;
    let outcome = train_from(&raw, init, &cfg, start_epoch)?;
    let final_accuracy = evaluate_matching(&raw, &outcome.encoders, &opts, &cfg.solver)?;
    let heldout = match &task {
        Some(task) => (1..=a.holdout)
            .map(|i| Ok(evaluate_matching(&task.batch(i)?.views, &outcome.encoders, &opts, &cfg.solver)?))
            .collect::<Result<Vec<_>, Failure>>()?,
        None => Vec::new(),
    };
    let stats = (!heldout.is_empty()).then(|| mean_std(&heldout));
    let summary = TrainSummary {
        start_epoch,
        end_epoch: outcome.checkpoint.epoch,
        initial_accuracy,
        final_accuracy,
        heldout_mean: stats.map(|s| s.0),
        heldout_std: stats.map(|s| s.1),
        heldout,
    };
    println!(
        "epochs {}..{}: train accuracy {:.3} -> {:.3}, held-out {}",
        summary.start_epoch,
        summary.end_epoch,
        initial_accuracy,
        final_accuracy,
        summary.heldout_mean.map_or("n/a".into(), |m| format!("{m:.3}"))
    );
    run.set_summary(&summary)?;
    run.write_json(&a.out, &outcome.checkpoint)?;
    run.write_csv(&trace_path, &outcome.trace)?;
    run.finish()?;
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<(), Failure> {
    let cfg = BenchConfig {
        modalities: a.modalities,
        batches: a.batches,
        dim: a.dim,
        k: a.k,
        metric: a.metric.into(),
        seed: a.seed,
        ..Default::default()
    };
    let mut run = Run::new("bench", a.seed, &cfg, &a.out)?;
    let rows = run_bench(&cfg)?;
    println!("   K    B  bary  pair  bary_s    pair_s    ratio  bary_acc  pair_acc");
    for r in &rows {
        println!(
            "{:>4} {:>4} {:>5} {:>5}  {:>8.4}  {:>8.4}  {:>5.2}  {:>8.3}  {:>8.3}",
            r.modalities,
            r.batch,
            r.barycenter_solves,
            r.pairwise_solves,
            r.barycenter_seconds,
            r.pairwise_seconds,
            r.time_ratio(),
            r.barycenter_accuracy,
            r.pairwise_accuracy
        );
    }
    let counts: Vec<_> =
        rows.iter().map(|r| json!([r.modalities, r.batch, r.barycenter_solves, r.pairwise_solves])).collect();
    run.set_summary(&json!({ "solve_counts": counts }))?;
    run.write_csv(&a.out, &rows)?;
    run.finish()?;
    Ok(())
}
