//! Main paths against the reference implementations in `gfa::oracle`.

use gfa::aggregate::{gfa_block_detailed, PassKind, PassWeights};
use gfa::complexity::{compute_scores, sobel_gradients, Pooling, ScoreStrategy};
use gfa::graph::build_graph;
use gfa::oracle::{count_edges, oracle_aggregate, oracle_candidates, oracle_scores, oracle_sobel, OracleReport};
use gfa::sampling::{build_all_candidates, CandidateMode};
use gfa::{allocate_quotas, FeatureMap, GfaConfig, PassOrder};

fn small_cfg() -> GfaConfig {
    GfaConfig {
        local_window: 5,
        global_grid: 4,
        avg_degree: 8,
        ..GfaConfig::default()
    }
}

#[test]
fn sobel_components_match_direct_convolution() {
    for seed in 0..20 {
        let f = FeatureMap::random_uniform(3 + seed as usize % 9, 2 + seed as usize % 11, 3, seed).unwrap();
        let g = sobel_gradients(&f);
        let (sx, sy) = oracle_sobel(&f);
        for k in 0..sx.len() {
            assert!((g.sx[k] - sx[k]).abs() < 1e-12);
            assert!((g.sy[k] - sy[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn every_strategy_matches_its_transcription() {
    for seed in 0..10 {
        let f = FeatureMap::random_uniform(9, 13, 4, 200 + seed).unwrap();
        for strategy in [
            ScoreStrategy::None,
            ScoreStrategy::Sobel,
            ScoreStrategy::RescalingResidual,
            ScoreStrategy::LocalEntropy,
        ] {
            for pooling in [Pooling::Rms, Pooling::Mean] {
                let a = compute_scores(&f, strategy, pooling);
                let b = oracle_scores(&f, strategy, pooling);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12, "{strategy:?}/{pooling:?}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn candidate_enumeration_matches_scan() {
    let cfg = small_cfg();
    for (h, w) in [(9, 9), (12, 7), (16, 16)] {
        let f = FeatureMap::filled(h, w, 1, 1.0).unwrap();
        for kind in [PassKind::Local, PassKind::Global] {
            let sets = build_all_candidates(f.shape(), cfg.local_window, cfg.global_grid, kind.candidate_mode()).unwrap();
            for (i, set) in sets.iter().enumerate() {
                assert_eq!(set.merged, oracle_candidates(h, w, i, kind, &cfg), "{kind:?} node {i}");
            }
        }
    }
}

#[test]
fn block_matches_reference_across_configs() {
    for (seed, order, strategy) in [
        (1, PassOrder::GlobalThenLocal, ScoreStrategy::Sobel),
        (2, PassOrder::LocalThenGlobal, ScoreStrategy::Sobel),
        (3, PassOrder::GlobalThenLocal, ScoreStrategy::LocalEntropy),
        (4, PassOrder::LocalThenGlobal, ScoreStrategy::RescalingResidual),
        (5, PassOrder::GlobalThenLocal, ScoreStrategy::None),
    ] {
        let cfg = GfaConfig { order, strategy, ..small_cfg() };
        let f = FeatureMap::random_uniform(12, 12, 4, seed).unwrap();
        let w = PassWeights::seeded(4, 6, seed).unwrap();
        let fast = gfa_block_detailed(&f, &cfg, &w).unwrap();
        let slow = oracle_aggregate(&f, &cfg, &w).unwrap();
        let mut report = OracleReport::new(format!("{order:?}/{strategy:?}"));
        for (p, q) in fast.passes.iter().zip(&slow) {
            report.check("targets", p.complexity.targets == q.targets);
            for i in 0..p.graph.nodes() {
                if p.graph.neighbors(i) != q.neighbors[i].as_slice() {
                    report.check(format!("neighbors {i}"), false);
                }
            }
            let agg: Vec<f32> = q.aggregated.iter().map(|&v| v as f32).collect();
            report.deviation(p.aggregated.data(), &agg);
            report.deviation(p.output.data(), q.output.data());
            report.edges += p.graph.edges_total();
            report.similarity_evals += p.graph.similarity_evals();
        }
        assert!(report.passed(), "{report:?}");
        assert!(report.max_abs_deviation <= 1e-5, "{report:?}");
    }
}

#[test]
fn edge_counts_follow_candidate_accounting() {
    let f = FeatureMap::random_uniform(64, 64, 4, 11).unwrap();
    let cfg = GfaConfig::default();
    let cands = build_all_candidates(f.shape(), 8, 16, CandidateMode::Both).unwrap();
    let sizes: Vec<usize> = cands.iter().map(|c| c.len()).collect();

    // brute-force count: window cells in bounds + lattice points - overlap
    let (h, w) = (64usize, 64usize);
    let mut expected = 0;
    for i in 0..h * w {
        let local = oracle_candidates(h, w, i, PassKind::Local, &cfg);
        let global = oracle_candidates(h, w, i, PassKind::Global, &cfg);
        let overlap = local.iter().filter(|j| global.contains(j)).count();
        expected += local.len() + global.len() - overlap;
    }

    let scores = compute_scores(&f, cfg.strategy, cfg.pooling);
    let q = allocate_quotas(&scores, cfg.avg_degree, &sizes).unwrap();
    let g = build_graph(&f, &cands, &q.targets, cfg.iterations).unwrap();
    let counts = count_edges(&g, &cfg);
    assert_eq!(counts.candidates, expected);
    assert_eq!(g.similarity_evals(), expected as u64);
    assert!(counts.edges <= counts.candidates);
    assert!(counts.candidates <= 64 * 64 * (64 + 256));
    assert!(counts.capacity_ratio <= 1.0);

    // keep-all targets select every candidate
    let g = build_graph(&f, &cands, &sizes, cfg.iterations).unwrap();
    let all = count_edges(&g, &cfg);
    assert_eq!(all.edges, all.candidates);
}

#[test]
fn small_local_window_mean_size() {
    let cfg = GfaConfig { local_window: 3, global_grid: 1, avg_degree: 4, ..GfaConfig::default() };
    let f = FeatureMap::random_uniform(100, 100, 2, 5).unwrap();
    let cands = build_all_candidates(f.shape(), 3, 1, CandidateMode::LocalOnly).unwrap();
    let sizes: Vec<usize> = cands.iter().map(|c| c.len()).collect();
    let g = build_graph(&f, &cands, &vec![4; 10_000], 5).unwrap();
    let counts = count_edges(&g, &cfg);
    let mean = counts.candidates as f64 / counts.nodes as f64;
    // 98^2 interior nodes see 9, 4 corners see 4, 392 edge nodes see 6
    assert_eq!(counts.candidates, 98 * 98 * 9 + 4 * 4 + 392 * 6);
    assert!((mean - 8.8804).abs() < 1e-9, "{mean}");
    assert_eq!(sizes.iter().sum::<usize>(), counts.candidates);
}

#[test]
fn scheduling_does_not_change_output() {
    let f = FeatureMap::random_uniform(16, 16, 8, 3).unwrap();
    let cfg = GfaConfig::default();
    let w = PassWeights::seeded(8, 8, 3).unwrap();
    let runs: Vec<Vec<f32>> = [1, 2, 7]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| gfa_block_detailed(&f, &cfg, &w).unwrap().output.into_data())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn pass_orders_differ() {
    let f = FeatureMap::random_uniform(16, 16, 8, 21).unwrap();
    let w = PassWeights::seeded(8, 8, 21).unwrap();
    let a = gfa_block_detailed(&f, &GfaConfig::default(), &w).unwrap();
    let cfg = GfaConfig { order: PassOrder::LocalThenGlobal, ..GfaConfig::default() };
    let b = gfa_block_detailed(&f, &cfg, &w).unwrap();
    assert_eq!(a.passes[0].kind, PassKind::Global);
    assert_eq!(b.passes[0].kind, PassKind::Local);
    assert_ne!(a.output, b.output);
}

#[test]
fn residual_doubles_constant_input_per_pass() {
    let f = FeatureMap::filled(16, 16, 4, 0.75).unwrap();
    let out = gfa_block_detailed(&f, &GfaConfig::default(), &PassWeights::identity(4).unwrap()).unwrap();
    for (p, input) in out.passes.iter().zip([&f, &out.passes[0].output]) {
        for (a, b) in p.aggregated.data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in p.output.data().iter().zip(input.data()) {
            assert!((a - 2.0 * b).abs() < 1e-6);
        }
    }
}
