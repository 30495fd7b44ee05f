//! Edge-conditioned aggregation and block composition.
//!
//! A pass scores its input, turns scores into target degrees, builds a graph
//! over local-only or global-only candidates, and replaces each node with a
//! softmax-weighted sum of its projected neighbors. A block is two passes
//! (one of each kind) with a residual around each pass whose input and output
//! widths agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{allocate_quotas, compute_scores, ComplexityScores, Pooling, ScoreStrategy};
use crate::error::{GfaError, Result};
use crate::graph::{build_graph, DirectedGraph};
use crate::sampling::{build_all_candidates, lattice_strides, CandidateMode};
use crate::tensor::FeatureMap;

/// Linear map `phi(x) = W^T x`, stored row-major as `c_in x c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    c_in: usize,
    c_out: usize,
    matrix: Vec<f32>,
}

impl ProjectionWeights {
    pub fn new(c_in: usize, c_out: usize, matrix: Vec<f32>) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(GfaError::config("projection widths must be positive"));
        }
        if matrix.len() != c_in * c_out {
            return Err(GfaError::config(format!(
                "projection {c_in}x{c_out} needs {} entries, got {}",
                c_in * c_out,
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GfaError::config("projection has non-finite entries"));
        }
        Ok(ProjectionWeights { c_in, c_out, matrix })
    }

    pub fn identity(c: usize) -> Result<Self> {
        let mut m = vec![0.0; c * c];
        for k in 0..c {
            m[k * c + k] = 1.0;
        }
        Self::new(c, c, m)
    }

    /// Uniform on `[-1, 1) / sqrt(c_in)` from a ChaCha8 stream seeded by `seed`.
    pub fn seeded(c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (c_in as f32).sqrt();
        let m = (0..c_in * c_out)
            .map(|_| rng.random_range(-1.0f32..1.0) * scale)
            .collect();
        Self::new(c_in, c_out, m)
    }

    /// Weights stored in a `c_in x c_out x 1` tensor.
    pub fn from_feature_map(f: &FeatureMap) -> Result<Self> {
        if f.channels() != 1 {
            return Err(GfaError::config(format!(
                "weight tensor must have one channel, got {}",
                f.channels()
            )));
        }
        Self::new(f.height(), f.width(), f.data().to_vec())
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    #[inline]
    pub fn get(&self, input: usize, output: usize) -> f32 {
        self.matrix[input * self.c_out + output]
    }

    fn project_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.matrix[k * self.c_out..(k + 1) * self.c_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xk * f64::from(w);
            }
        }
    }
}

/// Projections for the two passes of a block, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct PassWeights {
    pub first: ProjectionWeights,
    pub second: ProjectionWeights,
}

impl PassWeights {
    /// First pass maps `c_in -> c_out`, second `c_out -> c_out`.
    pub fn seeded(c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        Ok(PassWeights {
            first: ProjectionWeights::seeded(c_in, c_out, seed)?,
            second: ProjectionWeights::seeded(c_out, c_out, seed ^ 0x5851_f42d_4c95_7f2d)?,
        })
    }

    pub fn identity(c: usize) -> Result<Self> {
        Ok(PassWeights {
            first: ProjectionWeights::identity(c)?,
            second: ProjectionWeights::identity(c)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassOrder {
    GlobalThenLocal,
    LocalThenGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassKind {
    Local,
    Global,
}

impl PassKind {
    pub fn candidate_mode(self) -> CandidateMode {
        match self {
            PassKind::Local => CandidateMode::LocalOnly,
            PassKind::Global => CandidateMode::GlobalOnly,
        }
    }
}

impl PassOrder {
    pub fn passes(self) -> [PassKind; 2] {
        match self {
            PassOrder::GlobalThenLocal => [PassKind::Global, PassKind::Local],
            PassOrder::LocalThenGlobal => [PassKind::Local, PassKind::Global],
        }
    }
}

/// Hyperparameters of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GfaConfig {
    /// Side of the dense local window.
    pub local_window: usize,
    /// Side of the sparse global lattice.
    pub global_grid: usize,
    pub avg_degree: usize,
    /// Bisection iterations per node.
    pub iterations: usize,
    pub pooling: Pooling,
    pub strategy: ScoreStrategy,
    pub order: PassOrder,
    pub seed: u64,
}

impl Default for GfaConfig {
    fn default() -> Self {
        GfaConfig {
            local_window: 8,
            global_grid: 16,
            avg_degree: 64,
            iterations: 5,
            pooling: Pooling::Rms,
            strategy: ScoreStrategy::Sobel,
            order: PassOrder::GlobalThenLocal,
            seed: 0,
        }
    }
}

impl GfaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("local_window", self.local_window),
            ("global_grid", self.global_grid),
            ("avg_degree", self.avg_degree),
            ("iterations", self.iterations),
        ] {
            if v == 0 {
                return Err(GfaError::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Checks that both candidate kinds are well defined for `f`.
    pub fn validate_for(&self, f: &FeatureMap) -> Result<()> {
        self.validate()?;
        let shape = f.shape();
        if self.local_window > 2 * shape.height.max(shape.width) {
            return Err(GfaError::config(format!(
                "local window side {} exceeds twice the image extent {}x{}",
                self.local_window, shape.height, shape.width
            )));
        }
        lattice_strides(shape, self.global_grid)?;
        Ok(())
    }
}

/// Softmax of the similarities to the selected neighbors.
pub fn attention_weights(sims: &[f32]) -> Result<Vec<f64>> {
    if sims.is_empty() {
        return Err(GfaError::domain("attention over an empty neighborhood"));
    }
    let max = sims.iter().map(|&s| f64::from(s)).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|&s| (f64::from(s) - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `z_i = sum_{j in N_i} alpha_{i<-j} * phi(x_j)`, without residual.
///
/// `phi` is linear, so the neighbor mix is formed first and projected once.
pub fn aggregate_pass(
    f: &FeatureMap,
    graph: &DirectedGraph,
    weights: &ProjectionWeights,
) -> Result<FeatureMap> {
    if graph.nodes() != f.nodes() {
        return Err(GfaError::config(format!(
            "graph has {} nodes, feature map {}",
            graph.nodes(),
            f.nodes()
        )));
    }
    if weights.c_in() != f.channels() {
        return Err(GfaError::config(format!(
            "projection expects {} input channels, feature map has {}",
            weights.c_in(),
            f.channels()
        )));
    }
    let (c_in, c_out) = (weights.c_in(), weights.c_out());
    let rows: Vec<Vec<f32>> = (0..f.nodes())
        .into_par_iter()
        .map(|i| {
            let alpha = attention_weights(graph.neighbor_sims(i))?;
            let mut mix = vec![0.0f64; c_in];
            for (&j, &a) in graph.neighbors(i).iter().zip(&alpha) {
                for (m, &x) in mix.iter_mut().zip(f.row(j)) {
                    *m += a * f64::from(x);
                }
            }
            let mut out = vec![0.0f64; c_out];
            weights.project_into(&mix, &mut out);
            Ok(out.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    FeatureMap::new(f.height(), f.width(), c_out, rows.concat())
}

/// Everything one pass produced.
#[derive(Debug, Clone)]
pub struct PassOutput {
    pub kind: PassKind,
    pub complexity: ComplexityScores,
    pub graph: DirectedGraph,
    /// Aggregation result before the residual is added.
    pub aggregated: FeatureMap,
    pub output: FeatureMap,
}

/// Degree summary of one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PassStats {
    pub kind: PassKind,
    pub mean_degree: f64,
    pub mean_abs_deviation: f64,
    pub edges_total: usize,
}

impl PassOutput {
    pub fn stats(&self) -> PassStats {
        PassStats {
            kind: self.kind,
            mean_degree: self.graph.mean_degree(),
            mean_abs_deviation: self.graph.mean_abs_deviation(),
            edges_total: self.graph.edges_total(),
        }
    }
}

/// One scoring, graph-building and aggregation pass over `f`.
pub fn run_pass(
    f: &FeatureMap,
    cfg: &GfaConfig,
    kind: PassKind,
    weights: &ProjectionWeights,
) -> Result<PassOutput> {
    let candidates =
        build_all_candidates(f.shape(), cfg.local_window, cfg.global_grid, kind.candidate_mode())?;
    let sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
    let scores = compute_scores(f, cfg.strategy, cfg.pooling);
    let complexity = allocate_quotas(&scores, cfg.avg_degree, &sizes)?;
    let graph = build_graph(f, &candidates, &complexity.targets, cfg.iterations)?;
    let aggregated = aggregate_pass(f, &graph, weights)?;
    let output = if aggregated.channels() == f.channels() {
        f.add(&aggregated)?
    } else {
        aggregated.clone()
    };
    Ok(PassOutput {
        kind,
        complexity,
        graph,
        aggregated,
        output,
    })
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: FeatureMap,
    pub passes: Vec<PassOutput>,
}

/// Two passes in `cfg.order`, keeping every intermediate.
pub fn gfa_block_detailed(
    f: &FeatureMap,
    cfg: &GfaConfig,
    weights: &PassWeights,
) -> Result<BlockOutput> {
    cfg.validate_for(f)?;
    let [first_kind, second_kind] = cfg.order.passes();
    let first = run_pass(f, cfg, first_kind, &weights.first)?;
    let second = run_pass(&first.output, cfg, second_kind, &weights.second)?;
    Ok(BlockOutput {
        output: second.output.clone(),
        passes: vec![first, second],
    })
}

pub fn gfa_block(f: &FeatureMap, cfg: &GfaConfig, weights: &PassWeights) -> Result<FeatureMap> {
    gfa_block_detailed(f, cfg, weights).map(|b| b.output)
}

/// `blocks` consecutive blocks sharing one config, widening to `channels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub config: GfaConfig,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockStats {
    pub stage: usize,
    pub block: usize,
    pub passes: Vec<PassStats>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub output: FeatureMap,
    pub blocks: Vec<BlockStats>,
}

/// Seed of the projection used by `block` of `stage`.
pub fn block_seed(seed: u64, stage: usize, block: usize) -> u64 {
    // splitmix64 finalizer over a packed (seed, stage, block) key
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(((stage as u64) << 32) | (block as u64 + 1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs stages in sequence with seeded projections.
pub fn run_pipeline(f: &FeatureMap, stages: &[StageSpec]) -> Result<PipelineOutput> {
    run_pipeline_with(f, stages, |stage, block, spec, c_in| {
        PassWeights::seeded(c_in, spec.channels, block_seed(spec.config.seed, stage, block))
    })
}

/// Runs stages in sequence, asking `weights_for(stage, block, spec, c_in)`
/// for each block's projections.
pub fn run_pipeline_with(
    f: &FeatureMap,
    stages: &[StageSpec],
    mut weights_for: impl FnMut(usize, usize, &StageSpec, usize) -> Result<PassWeights>,
) -> Result<PipelineOutput> {
    let mut current = f.clone();
    let mut blocks = Vec::new();
    for (s, spec) in stages.iter().enumerate() {
        if spec.channels == 0 {
            return Err(GfaError::config(format!("stage {s} has zero channels")));
        }
        for b in 0..spec.blocks {
            let weights = weights_for(s, b, spec, current.channels())?;
            if weights.first.c_in() != current.channels()
                || weights.second.c_in() != weights.first.c_out()
            {
                return Err(GfaError::config(format!(
                    "stage {s} block {b}: projections do not chain from {} channels",
                    current.channels()
                )));
            }
            let out = gfa_block_detailed(&current, &spec.config, &weights)?;
            blocks.push(BlockStats {
                stage: s,
                block: b,
                passes: out.passes.iter().map(PassOutput::stats).collect(),
            });
            current = out.output;
        }
    }
    Ok(PipelineOutput {
        output: current,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::sampling::build_all_candidates;

    fn small_cfg() -> GfaConfig {
        GfaConfig {
            local_window: 3,
            global_grid: 2,
            avg_degree: 4,
            ..GfaConfig::default()
        }
    }

    #[test]
    fn attention_examples() {
        assert_eq!(attention_weights(&[0.3]).unwrap(), vec![1.0]);
        assert_eq!(attention_weights(&[0.2, 0.2]).unwrap(), vec![0.5, 0.5]);
        let a = attention_weights(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((a[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((a[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((a[0] - 0.7311).abs() < 1e-4);
        assert!(attention_weights(&[]).is_err());
    }

    #[test]
    fn constant_input_is_fixed_point() {
        let f = FeatureMap::filled(6, 6, 3, 0.25).unwrap();
        let cands =
            build_all_candidates(f.shape(), 3, 2, CandidateMode::LocalOnly).unwrap();
        let g = build_graph(&f, &cands, &vec![4; 36], 5).unwrap();
        let out = aggregate_pass(&f, &g, &ProjectionWeights::identity(3).unwrap()).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn self_loop_graph_is_identity() {
        let f = FeatureMap::from_fn(4, 5, 2, |u, v, k| (u * 10 + v) as f32 * if k == 0 { 1.0 } else { -0.5 })
            .unwrap();
        let cands = build_all_candidates(f.shape(), 1, 1, CandidateMode::LocalOnly).unwrap();
        let g = build_graph(&f, &cands, &[1; 20], 5).unwrap();
        let out = aggregate_pass(&f, &g, &ProjectionWeights::identity(2).unwrap()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn block_doubles_constant_input() {
        let f = FeatureMap::filled(8, 8, 2, 1.5).unwrap();
        let out = gfa_block(&f, &small_cfg(), &PassWeights::identity(2).unwrap()).unwrap();
        // each pass returns its input and the residual adds it once more
        for v in out.data() {
            assert!((v - 6.0).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn strategy_none_gives_uniform_targets() {
        let f = FeatureMap::from_fn(8, 8, 2, |u, v, k| ((u * 7 + v * 3 + k) % 5) as f32).unwrap();
        let cfg = GfaConfig {
            strategy: ScoreStrategy::None,
            ..small_cfg()
        };
        let out = gfa_block_detailed(&f, &cfg, &PassWeights::identity(2).unwrap()).unwrap();
        for p in &out.passes {
            for (t, n) in p.complexity.targets.iter().zip(p.graph.candidate_counts()) {
                assert_eq!(*t, 4.min(*n));
            }
        }
    }

    #[test]
    fn widening_pass_drops_residual() {
        let f = FeatureMap::from_fn(8, 8, 2, |u, v, k| (u + 2 * v + k) as f32 / 10.0).unwrap();
        let w = PassWeights::seeded(2, 5, 3).unwrap();
        let out = gfa_block_detailed(&f, &small_cfg(), &w).unwrap();
        assert_eq!(out.passes[0].output, out.passes[0].aggregated);
        assert_eq!(out.output.channels(), 5);
        assert_ne!(out.passes[1].output, out.passes[1].aggregated);
    }

    #[test]
    fn weight_mismatch_is_config_error() {
        let f = FeatureMap::filled(8, 8, 3, 1.0).unwrap();
        let w = PassWeights::identity(2).unwrap();
        assert!(matches!(gfa_block(&f, &small_cfg(), &w), Err(GfaError::Config(_))));
        assert!(ProjectionWeights::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn config_validation() {
        let f = FeatureMap::filled(8, 8, 1, 1.0).unwrap();
        assert!(GfaConfig::default().validate_for(&f).is_err());
        assert!(small_cfg().validate_for(&f).is_ok());
        let zero = GfaConfig { iterations: 0, ..small_cfg() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let cfg: GfaConfig = serde_json::from_str(r#"{"avg_degree": 8, "order": "local-then-global"}"#).unwrap();
        assert_eq!(cfg.avg_degree, 8);
        assert_eq!(cfg.order, PassOrder::LocalThenGlobal);
        assert_eq!(cfg.local_window, 8);
        assert!(serde_json::from_str::<GfaConfig>(r#"{"avg_degre": 8}"#).is_err());
        let s = serde_json::to_string(&GfaConfig::default()).unwrap();
        assert!(s.contains(r#""strategy":"sobel""#));
        assert!(s.contains(r#""order":"global-then-local""#));
    }

    #[test]
    fn pipeline_zero_and_one_block() {
        let f = FeatureMap::from_fn(8, 8, 2, |u, v, k| ((u * 5 + v * 3 + k) % 7) as f32).unwrap();
        let empty = run_pipeline(&f, &[]).unwrap();
        assert_eq!(empty.output, f);
        let none = run_pipeline(&f, &[StageSpec { blocks: 0, config: small_cfg(), channels: 2 }]).unwrap();
        assert_eq!(none.output, f);

        let spec = StageSpec { blocks: 1, config: small_cfg(), channels: 2 };
        let one = run_pipeline(&f, &[spec]).unwrap();
        let w = PassWeights::seeded(2, 2, block_seed(0, 0, 0)).unwrap();
        assert_eq!(one.output, gfa_block(&f, &small_cfg(), &w).unwrap());
        assert_eq!(one.blocks.len(), 1);
        assert_eq!(one.blocks[0].passes.len(), 2);
    }

    #[test]
    fn seeded_weights_are_reproducible() {
        let a = ProjectionWeights::seeded(4, 3, 11).unwrap();
        let b = ProjectionWeights::seeded(4, 3, 11).unwrap();
        let c = ProjectionWeights::seeded(4, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.matrix().iter().all(|v| v.abs() <= 0.5));
        assert_ne!(block_seed(1, 0, 1), block_seed(1, 1, 0));
    }
}
