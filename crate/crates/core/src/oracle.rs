//! Slow reference implementations.
//!
//! Everything here is written from the defining formulas with plain nested
//! loops and does not call into the sampling, complexity, graph or aggregate
//! modules; only the data containers are shared. Tests compare the optimized
//! paths against these.

use serde::Serialize;

use crate::aggregate::{GfaConfig, PassKind, PassWeights, ProjectionWeights};
use crate::complexity::{Pooling, ScoreStrategy};
use crate::error::{GfaError, Result};
use crate::graph::DirectedGraph;
use crate::tensor::FeatureMap;

/// Indices of the `k` largest values plus every value tied with the k-th.
///
/// The result is the superlevel set at the k-th largest value, ascending.
pub fn oracle_topk(sims: &[f32], k: usize) -> Result<Vec<usize>> {
    if sims.is_empty() {
        return Err(GfaError::domain("top-k of an empty row"));
    }
    if k == 0 || k > sims.len() {
        return Err(GfaError::domain(format!("k = {k} outside [1, {}]", sims.len())));
    }
    let mut sorted = sims.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let kth = sorted[k - 1];
    Ok((0..sims.len()).filter(|&j| sims[j] >= kth).collect())
}

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Direct 3x3 correlation with replicate padding; returns `(Sx, Sy)` laid out
/// like the input.
pub fn oracle_sobel(f: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let (h, w, c) = (f.height() as isize, f.width() as isize, f.channels());
    let mut sx = Vec::with_capacity(f.data().len());
    let mut sy = Vec::with_capacity(f.data().len());
    for u in 0..h {
        for v in 0..w {
            for k in 0..c {
                let mut gx = 0.0;
                let mut gy = 0.0;
                for a in 0..3isize {
                    for b in 0..3isize {
                        let r = (u + a - 1).clamp(0, h - 1) as usize;
                        let s = (v + b - 1).clamp(0, w - 1) as usize;
                        let x = f64::from(f.at(r, s, k));
                        gx += KX[a as usize][b as usize] * x;
                        gy += KY[a as usize][b as usize] * x;
                    }
                }
                sx.push(gx);
                sy.push(gy);
            }
        }
    }
    (sx, sy)
}

fn pool(values: &[f64], pooling: Pooling) -> f64 {
    let n = values.len() as f64;
    match pooling {
        Pooling::Rms => (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        Pooling::Mean => values.iter().sum::<f64>() / n,
    }
}

pub fn oracle_rms_score(f: &FeatureMap, pooling: Pooling) -> Vec<f64> {
    let (sx, sy) = oracle_sobel(f);
    let c = f.channels();
    (0..f.nodes())
        .map(|i| {
            let mags: Vec<f64> = (0..c)
                .map(|k| (sx[i * c + k].powi(2) + sy[i * c + k].powi(2)).sqrt())
                .collect();
            pool(&mags, pooling)
        })
        .collect()
}

/// All four scoring strategies, transcribed directly.
pub fn oracle_scores(f: &FeatureMap, strategy: ScoreStrategy, pooling: Pooling) -> Vec<f64> {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    match strategy {
        ScoreStrategy::None => vec![1.0; h * w],
        ScoreStrategy::Sobel => oracle_rms_score(f, pooling),
        ScoreStrategy::RescalingResidual => {
            let mut out = Vec::with_capacity(h * w);
            for u in 0..h {
                for v in 0..w {
                    let (bu, bv) = (u - u % 2, v - v % 2);
                    let mut res = Vec::with_capacity(c);
                    for k in 0..c {
                        let mut sum = 0.0;
                        let mut n = 0.0;
                        for r in bu..(bu + 2).min(h) {
                            for s in bv..(bv + 2).min(w) {
                                sum += f64::from(f.at(r, s, k));
                                n += 1.0;
                            }
                        }
                        res.push((f64::from(f.at(u, v, k)) - sum / n).abs());
                    }
                    out.push(pool(&res, pooling));
                }
            }
            out
        }
        ScoreStrategy::LocalEntropy => {
            let pooled: Vec<f64> = (0..h * w)
                .map(|i| {
                    let vals: Vec<f64> =
                        (0..c).map(|k| f64::from(f.at(i / w, i % w, k))).collect();
                    pool(&vals, pooling)
                })
                .collect();
            let lo = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let bin = |p: f64| -> usize {
                if hi > lo {
                    (((p - lo) / (hi - lo) * 8.0) as usize).min(7)
                } else {
                    0
                }
            };
            let mut out = Vec::with_capacity(h * w);
            for u in 0..h as isize {
                for v in 0..w as isize {
                    let mut counts = [0.0f64; 8];
                    for r in u - 1..=u + 1 {
                        for s in v - 1..=v + 1 {
                            let r = r.clamp(0, h as isize - 1) as usize;
                            let s = s.clamp(0, w as isize - 1) as usize;
                            counts[bin(pooled[r * w + s])] += 1.0;
                        }
                    }
                    let mut e = 0.0;
                    for n in counts {
                        if n > 0.0 {
                            e -= (n / 9.0) * (n / 9.0).log2();
                        }
                    }
                    out.push(e.max(0.0));
                }
            }
            out
        }
    }
}

/// Candidate list of `i` for one pass kind, by scanning every node.
pub fn oracle_candidates(h: usize, w: usize, i: usize, kind: PassKind, cfg: &GfaConfig) -> Vec<usize> {
    let (ui, vi) = (i / w, i % w);
    let mut out = Vec::new();
    match kind {
        PassKind::Local => {
            let half = (cfg.local_window / 2) as isize;
            for j in 0..h * w {
                let du = (j / w) as isize - ui as isize;
                let dv = (j % w) as isize - vi as isize;
                let span = cfg.local_window as isize - half;
                if du >= -half && du < span && dv >= -half && dv < span {
                    out.push(j);
                }
            }
        }
        PassKind::Global => {
            let (sh, sw) = (h / cfg.global_grid, w / cfg.global_grid);
            for j in 0..h * w {
                let (uj, vj) = (j / w, j % w);
                if uj % sh == ui % sh
                    && vj % sw == vi % sw
                    && uj / sh < cfg.global_grid
                    && vj / sw < cfg.global_grid
                {
                    out.push(j);
                }
            }
        }
    }
    out
}

fn oracle_cosine(f: &FeatureMap, i: usize, j: usize) -> f32 {
    let xi = f.feature(i.into()).expect("index in range");
    let xj = f.feature(j.into()).expect("index in range");
    let mut dot = 0.0f64;
    let mut ni = 0.0f64;
    let mut nj = 0.0f64;
    for k in 0..xi.len() {
        dot += f64::from(xi[k]) * f64::from(xj[k]);
    }
    for k in 0..xi.len() {
        ni += f64::from(xi[k]) * f64::from(xi[k]);
        nj += f64::from(xj[k]) * f64::from(xj[k]);
    }
    let (ni, nj) = (ni.sqrt(), nj.sqrt());
    if ni < 1e-12 || nj < 1e-12 {
        return 0.0;
    }
    ((dot / (ni * nj)) as f32).clamp(-1.0, 1.0)
}

/// Literal transcription of the per-node bisection, returning positions.
pub fn oracle_bisect(sims: &[f32], target: usize, iterations: usize) -> (f64, Vec<usize>) {
    let s: Vec<f64> = sims.iter().map(|&x| f64::from(x)).collect();
    let mut lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut theta = s.iter().sum::<f64>() / s.len() as f64;
    for _ in 0..iterations {
        let m = s.iter().filter(|&&x| x >= theta).count();
        if m > target {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = (lo + hi) / 2.0;
    }
    if target == s.len() {
        theta = theta.min(s.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    if !s.iter().any(|&x| x >= theta) {
        theta = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    (theta, (0..s.len()).filter(|&j| s[j] >= theta).collect())
}

/// One reference pass.
#[derive(Debug, Clone)]
pub struct OraclePass {
    pub neighbors: Vec<Vec<usize>>,
    pub alphas: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
    /// Aggregation before the residual, row-major `N x c_out`.
    pub aggregated: Vec<f64>,
    pub output: FeatureMap,
}

fn oracle_pass(
    f: &FeatureMap,
    cfg: &GfaConfig,
    kind: PassKind,
    weights: &ProjectionWeights,
) -> Result<OraclePass> {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let n = h * w;
    if weights.c_in() != c {
        return Err(GfaError::config("projection input width mismatch"));
    }
    let c_out = weights.c_out();

    let cands: Vec<Vec<usize>> = (0..n).map(|i| oracle_candidates(h, w, i, kind, cfg)).collect();

    let scores = oracle_scores(f, cfg.strategy, cfg.pooling);
    let total: f64 = scores.iter().sum();
    let budget = (n * cfg.avg_degree) as f64;
    let targets: Vec<usize> = (0..n)
        .map(|i| {
            let wi = if total > 0.0 { scores[i] / total } else { 1.0 / n as f64 };
            let q = (budget * wi).round();
            let q = if q < 1.0 { 1 } else { q as usize };
            q.min(cands[i].len())
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    let mut aggregated = vec![0.0f64; n * c_out];
    for i in 0..n {
        let sims: Vec<f32> = cands[i].iter().map(|&j| oracle_cosine(f, i, j)).collect();
        let (_, picked) = oracle_bisect(&sims, targets[i], cfg.iterations);
        let nbrs: Vec<usize> = picked.iter().map(|&p| cands[i][p]).collect();
        let denom: f64 = picked.iter().map(|&p| f64::from(sims[p]).exp()).sum();
        let alpha: Vec<f64> = picked.iter().map(|&p| f64::from(sims[p]).exp() / denom).collect();
        for (&j, &a) in nbrs.iter().zip(&alpha) {
            for o in 0..c_out {
                let mut phi = 0.0f64;
                for k in 0..c {
                    phi += f64::from(weights.get(k, o)) * f64::from(f.at(j / w, j % w, k));
                }
                aggregated[i * c_out + o] += a * phi;
            }
        }
        neighbors.push(nbrs);
        alphas.push(alpha);
    }

    let mut out = Vec::with_capacity(n * c_out);
    for i in 0..n {
        for o in 0..c_out {
            let z = aggregated[i * c_out + o] as f32;
            out.push(if c_out == c { f.at(i / w, i % w, o) + z } else { z });
        }
    }
    Ok(OraclePass {
        neighbors,
        alphas,
        targets,
        aggregated,
        output: FeatureMap::new(h, w, c_out, out)?,
    })
}

/// Reference block: two passes in `cfg.order`, single-threaded.
pub fn oracle_aggregate(
    f: &FeatureMap,
    cfg: &GfaConfig,
    weights: &PassWeights,
) -> Result<Vec<OraclePass>> {
    let [k1, k2] = cfg.order.passes();
    let first = oracle_pass(f, cfg, k1, &weights.first)?;
    let second = oracle_pass(&first.output, cfg, k2, &weights.second)?;
    Ok(vec![first, second])
}

/// Edge accounting for one built graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeCounts {
    pub nodes: usize,
    /// Sum of realized degrees.
    pub edges: usize,
    /// Sum of candidate-set sizes.
    pub candidates: usize,
    /// `edges / (N * avg_degree)`.
    pub budget_ratio: f64,
    /// `candidates / (N * (L^2 + G^2))`.
    pub capacity_ratio: f64,
}

pub fn count_edges(graph: &DirectedGraph, cfg: &GfaConfig) -> EdgeCounts {
    let nodes = graph.nodes();
    let mut edges = 0;
    let mut candidates = 0;
    for i in 0..nodes {
        edges += graph.neighbors(i).len();
        candidates += graph.candidate_counts()[i];
    }
    let cap = cfg.local_window.pow(2) + cfg.global_grid.pow(2);
    EdgeCounts {
        nodes,
        edges,
        candidates,
        budget_ratio: edges as f64 / (nodes * cfg.avg_degree) as f64,
        capacity_ratio: candidates as f64 / (nodes * cap) as f64,
    }
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub case_id: String,
    pub max_abs_deviation: f64,
    pub checks: Vec<(String, bool)>,
    pub edges: usize,
    pub similarity_evals: u64,
}

impl OracleReport {
    pub fn new(case_id: impl Into<String>) -> Self {
        OracleReport {
            case_id: case_id.into(),
            max_abs_deviation: 0.0,
            checks: Vec::new(),
            edges: 0,
            similarity_evals: 0,
        }
    }

    pub fn deviation(&mut self, a: &[f32], b: &[f32]) {
        let d = a
            .iter()
            .zip(b)
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
            .fold(0.0, f64::max);
        self.max_abs_deviation = self.max_abs_deviation.max(d);
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}
