//! Property tests across module boundaries.

use mgalign::io::{parse_embeddings, write_embeddings_binary, write_embeddings_json};
use mgalign::multi::build_problem;
use mgalign::{
    build_knn_graph, d_sga, ground_truth, hamming_loss, solve_exact, solve_heuristic, solve_multi, solve_pairwise,
    AffinityPair, AlignOptions, EmbeddingMatrix, HeuristicConfig, Matching, Metric, ModalityBatch, MultiMatching,
    NodeStructure, Solver, ABS_TOL,
};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, dim: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-1.0f64..1.0, rows * dim)
        .prop_map(move |v| Array2::from_shape_vec((rows, dim), v).unwrap())
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn graph_pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, usize)> {
    (2usize..=6).prop_flat_map(|n| (matrix(n, 3), matrix(n, 3), 1..n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heuristic_never_beats_exact((a, b, k) in graph_pair(), seed in 0u64..1000) {
        let g1 = build_knn_graph(EmbeddingMatrix::new(a).unwrap(), k, Metric::Euclidean).unwrap();
        let g2 = build_knn_graph(EmbeddingMatrix::new(b).unwrap(), k, Metric::Euclidean).unwrap();
        let aff = AffinityPair::between(&g1, &g2, Metric::Euclidean).unwrap();
        let exact = solve_exact(&aff).unwrap().objective;
        let h = solve_heuristic(&aff, &HeuristicConfig { seed, ..Default::default() }).unwrap().objective;
        prop_assert!(h >= exact - ABS_TOL);
    }

    #[test]
    fn distance_is_symmetric_and_relabel_invariant((a, b, k) in graph_pair(), seed in any::<u64>()) {
        let n = a.nrows();
        let g1 = build_knn_graph(EmbeddingMatrix::new(a).unwrap(), k, Metric::Euclidean).unwrap();
        let g2 = build_knn_graph(EmbeddingMatrix::new(b).unwrap(), k, Metric::Euclidean).unwrap();
        let d12 = d_sga(&g1, &g2, Metric::Euclidean).unwrap();
        prop_assert!((d12 - d_sga(&g2, &g1, Metric::Euclidean).unwrap()).abs() <= ABS_TOL);
        let perm: Vec<usize> = {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            p
        };
        let moved = g2.relabel(&perm).unwrap();
        prop_assert!((d12 - d_sga(&g1, &moved, Metric::Euclidean).unwrap()).abs() <= ABS_TOL);
    }

    #[test]
    fn hamming_is_symmetric_and_even(p in (1usize..7).prop_flat_map(|n| (permutation(n), permutation(n), permutation(n), permutation(n)))) {
        let a = MultiMatching(vec![Matching::new(p.0).unwrap(), Matching::new(p.1).unwrap()]);
        let b = MultiMatching(vec![Matching::new(p.2).unwrap(), Matching::new(p.3).unwrap()]);
        let l = hamming_loss(&a, &b).unwrap();
        prop_assert_eq!(l, hamming_loss(&b, &a).unwrap());
        prop_assert_eq!(l % 2.0, 0.0);
        prop_assert_eq!(l == 0.0, a == b);
    }

    #[test]
    fn matching_inverse_composes_to_identity(p in (1usize..9).prop_flat_map(permutation)) {
        let m = Matching::new(p).unwrap();
        prop_assert!(m.then(&m.inverse()).unwrap().is_identity());
        prop_assert!(m.inverse().then(&m).unwrap().is_identity());
    }

    #[test]
    fn multi_objective_is_relabeling_equivariant(
        views in (2usize..=6).prop_flat_map(|b| (matrix(b, 3), matrix(b, 3), matrix(b, 3), permutation(b))),
    ) {
        let (v, a, ae, perm) = views;
        let batch = ModalityBatch::triplet(
            EmbeddingMatrix::new(v).unwrap(),
            EmbeddingMatrix::new(a).unwrap(),
            EmbeddingMatrix::new(ae).unwrap(),
        ).unwrap();
        let opts = AlignOptions::new(2, Metric::Euclidean);
        let base = solve_multi(&batch, &opts, &Solver::Exact).unwrap().total_objective;
        let moved = batch.permute_records(&Matching::new(perm).unwrap()).unwrap();
        let other = solve_multi(&moved, &opts, &Solver::Exact).unwrap().total_objective;
        prop_assert!((base - other).abs() <= ABS_TOL.max(1e-9 * base.abs()), "{} vs {}", base, other);
    }

    #[test]
    fn barycenter_features_are_means(views in (1usize..=6).prop_flat_map(|b| (matrix(b, 2), matrix(b, 2), matrix(b, 2)))) {
        let (v, a, ae) = views;
        let batch = ModalityBatch::triplet(
            EmbeddingMatrix::new(v.clone()).unwrap(),
            EmbeddingMatrix::new(a.clone()).unwrap(),
            EmbeddingMatrix::new(ae.clone()).unwrap(),
        ).unwrap();
        let problem = build_problem(&batch, &AlignOptions::new(2, Metric::Euclidean)).unwrap();
        let f = problem.barycenter.graph().features();
        for ((x, (p, q)), r) in f.iter().zip(v.iter().zip(a.iter())).zip(ae.iter()) {
            prop_assert!((x - (p + q + r) / 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn embedding_formats_round_trip(m in (1usize..6, 1usize..5).prop_flat_map(|(r, d)| matrix(r, d))) {
        let m = EmbeddingMatrix::new(m).unwrap();
        let mut json = Vec::new();
        write_embeddings_json(&m, &mut json).unwrap();
        prop_assert_eq!(&parse_embeddings(&json).unwrap(), &m);
        let mut bin = Vec::new();
        write_embeddings_binary(&m, &mut bin).unwrap();
        let back = parse_embeddings(&bin).unwrap();
        for (x, y) in back.view().iter().zip(m.view().iter()) {
            prop_assert_eq!(*x, (*y as f32) as f64);
        }
    }
}

#[test]
fn pairwise_and_barycenter_agree_when_both_are_identity() {
    use mgalign::trainer::{EncoderSet, LinearMap, SyntheticSpec, SyntheticTask};
    let mut compared = 0;
    for seed in 0..30 {
        let task = SyntheticTask::new(SyntheticSpec { batch: 6, margin: 10.0, seed, ..Default::default() }).unwrap();
        let recover = EncoderSet {
            encoders: task
                .mixing
                .iter()
                .map(|m| LinearMap { weight: m.t().to_owned(), bias: ndarray::Array1::zeros(4) })
                .collect(),
        };
        let batch = recover.encode(&task.batch(0).unwrap().views).unwrap();
        let opts = AlignOptions::new(5, Metric::Euclidean);
        let bary = solve_multi(&batch, &opts, &Solver::Exact).unwrap();
        let pair = solve_pairwise(&batch, &opts, &Solver::Exact).unwrap();
        if bary.matchings() == ground_truth(&batch) {
            compared += 1;
            if pair.all_identity() {
                assert_eq!(bary.matchings().triplets(), pair.triplets());
            }
        }
    }
    assert!(compared > 0);
}
