//! Directed graph construction by per-node cosine thresholding.
//!
//! For each node, similarities to its candidates are computed once, then a
//! fixed number of bisection steps moves a threshold `theta` toward the value
//! whose superlevel set `{j : S_ij >= theta}` has the target size. The final
//! neighbor set is exactly that superlevel set.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GfaError, Result};
use crate::sampling::CandidateSet;
use crate::tensor::FeatureMap;

/// Norms below this are treated as zero vectors with similarity 0.
pub const NORM_EPSILON: f64 = 1e-12;

/// Cosine similarities from one node to its ordered candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub owner: usize,
    pub candidates: Vec<usize>,
    pub sims: Vec<f32>,
}

fn norm(x: &[f32]) -> f64 {
    x.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// f64 accumulation, rounded to f32 and clamped to `[-1, 1]`.
#[inline]
fn cosine(xi: &[f32], norm_i: f64, xj: &[f32], norm_j: f64) -> f32 {
    if norm_i < NORM_EPSILON || norm_j < NORM_EPSILON {
        return 0.0;
    }
    let dot: f64 = xi
        .iter()
        .zip(xj)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    ((dot / (norm_i * norm_j)) as f32).clamp(-1.0, 1.0)
}

/// Similarities between `cand.owner` and each member of `cand.merged`.
pub fn cosine_row(f: &FeatureMap, cand: &CandidateSet) -> Result<SimilarityRow> {
    if cand.is_empty() {
        return Err(GfaError::domain(format!(
            "node {} has an empty candidate set",
            cand.owner
        )));
    }
    let n = f.nodes();
    if let Some(&bad) = cand.merged.iter().chain([&cand.owner]).find(|&&j| j >= n) {
        return Err(GfaError::Index { index: bad, nodes: n });
    }
    let xi = f.row(cand.owner);
    let ni = norm(xi);
    let sims = cand
        .merged
        .iter()
        .map(|&j| {
            let xj = f.row(j);
            cosine(xi, ni, xj, norm(xj))
        })
        .collect();
    Ok(SimilarityRow {
        owner: cand.owner,
        candidates: cand.merged.clone(),
        sims,
    })
}

/// State after one bisection iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionStep {
    /// Count `m(theta)` evaluated at the start of the iteration.
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
    /// Midpoint carried into the next iteration.
    pub theta: f64,
}

/// Outcome of the threshold search for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub theta: f64,
    /// Positions (into the row) of the selected candidates, ascending.
    pub members: Vec<usize>,
}

impl Selection {
    pub fn degree(&self) -> usize {
        self.members.len()
    }
}

#[inline]
fn count_at_least(sims: &[f32], theta: f64) -> usize {
    sims.iter().filter(|&&s| f64::from(s) >= theta).count()
}

fn check_bisection_args(sims: &[f32], target: usize, iterations: usize) -> Result<()> {
    if sims.is_empty() {
        return Err(GfaError::domain("cannot threshold an empty similarity row"));
    }
    if target == 0 || target > sims.len() {
        return Err(GfaError::domain(format!(
            "target degree {target} outside [1, {}]",
            sims.len()
        )));
    }
    if iterations == 0 {
        return Err(GfaError::config("bisection needs at least one iteration"));
    }
    Ok(())
}

fn run_bisection(
    sims: &[f32],
    target: usize,
    iterations: usize,
    mut on_step: impl FnMut(BisectionStep),
) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    for &s in sims {
        let s = f64::from(s);
        lo = lo.min(s);
        hi = hi.max(s);
        sum += s;
    }
    let mut theta = sum / sims.len() as f64;
    for _ in 0..iterations {
        let count = count_at_least(sims, theta);
        if count > target {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = (lo + hi) / 2.0;
        on_step(BisectionStep {
            count,
            lo,
            hi,
            theta,
        });
    }
    theta
}

/// Runs exactly `iterations` bisection steps toward `m(theta) = target`.
///
/// Starts from `lo = min S`, `hi = max S`, `theta = mean S`. Members are every
/// candidate with `S >= theta`, ties included. Two repairs follow the loop: a
/// target equal to the row length lowers `theta` to `min S`, and a threshold
/// that selects nothing is lowered to `max S`, keeping the argmax candidates.
pub fn bisect_threshold(sims: &[f32], target: usize, iterations: usize) -> Result<Selection> {
    check_bisection_args(sims, target, iterations)?;
    let mut theta = run_bisection(sims, target, iterations, |_| {});
    if target == sims.len() {
        // midpoints never reach the lower bracket, so a keep-all target
        // would otherwise always drop the minimum
        theta = theta.min(sims.iter().map(|&s| f64::from(s)).fold(f64::INFINITY, f64::min));
    }
    if count_at_least(sims, theta) == 0 {
        theta = sims.iter().map(|&s| f64::from(s)).fold(f64::NEG_INFINITY, f64::max);
    }
    let members = sims
        .iter()
        .enumerate()
        .filter(|(_, &s)| f64::from(s) >= theta)
        .map(|(k, _)| k)
        .collect();
    Ok(Selection { theta, members })
}

/// The per-iteration states that [`bisect_threshold`] passes through.
pub fn bisection_trace(
    sims: &[f32],
    target: usize,
    iterations: usize,
) -> Result<Vec<BisectionStep>> {
    check_bisection_args(sims, target, iterations)?;
    let mut steps = Vec::with_capacity(iterations);
    run_bisection(sims, target, iterations, |s| steps.push(s));
    Ok(steps)
}

/// Sparse directed adjacency in CSR form. Row `i` lists the nodes `j` that
/// send messages to `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    neighbor_sims: Vec<f32>,
    thetas: Vec<f64>,
    targets: Vec<usize>,
    candidate_counts: Vec<usize>,
    similarity_evals: u64,
}

struct BuiltRow {
    neighbors: Vec<usize>,
    sims: Vec<f32>,
    theta: f64,
    evals: u64,
}

fn build_row(
    f: &FeatureMap,
    norms: &[f64],
    cand: &CandidateSet,
    target: usize,
    iterations: usize,
) -> Result<BuiltRow> {
    if cand.is_empty() {
        return Err(GfaError::domain(format!(
            "node {} has an empty candidate set",
            cand.owner
        )));
    }
    let xi = f.row(cand.owner);
    let ni = norms[cand.owner];
    let mut evals = 0u64;
    let sims: Vec<f32> = cand
        .merged
        .iter()
        .map(|&j| {
            evals += 1;
            cosine(xi, ni, f.row(j), norms[j])
        })
        .collect();
    let sel = bisect_threshold(&sims, target, iterations)?;
    Ok(BuiltRow {
        neighbors: sel.members.iter().map(|&k| cand.merged[k]).collect(),
        sims: sel.members.iter().map(|&k| sims[k]).collect(),
        theta: sel.theta,
        evals,
    })
}

/// Builds every node's neighbor set independently and gathers rows by index.
///
/// Rows are computed in parallel on the current rayon pool; the result does
/// not depend on scheduling.
pub fn build_graph(
    f: &FeatureMap,
    candidates: &[CandidateSet],
    targets: &[usize],
    iterations: usize,
) -> Result<DirectedGraph> {
    let n = f.nodes();
    if candidates.len() != n || targets.len() != n {
        return Err(GfaError::config(format!(
            "{n} nodes but {} candidate sets and {} targets",
            candidates.len(),
            targets.len()
        )));
    }
    for (i, c) in candidates.iter().enumerate() {
        if c.owner != i {
            return Err(GfaError::config(format!(
                "candidate set {i} belongs to node {}",
                c.owner
            )));
        }
        if let Some(&bad) = c.merged.iter().find(|&&j| j >= n) {
            return Err(GfaError::Index { index: bad, nodes: n });
        }
    }
    if iterations == 0 {
        return Err(GfaError::config("bisection needs at least one iteration"));
    }

    let norms: Vec<f64> = (0..n).into_par_iter().map(|i| norm(f.row(i))).collect();
    let rows: Vec<BuiltRow> = candidates
        .par_iter()
        .zip(targets.par_iter())
        .map(|(c, &t)| build_row(f, &norms, c, t, iterations))
        .collect::<Result<_>>()?;

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let total: usize = rows.iter().map(|r| r.neighbors.len()).sum();
    let mut neighbors = Vec::with_capacity(total);
    let mut neighbor_sims = Vec::with_capacity(total);
    let mut thetas = Vec::with_capacity(n);
    let mut similarity_evals = 0;
    for row in rows {
        neighbors.extend_from_slice(&row.neighbors);
        neighbor_sims.extend_from_slice(&row.sims);
        offsets.push(neighbors.len());
        thetas.push(row.theta);
        similarity_evals += row.evals;
    }
    Ok(DirectedGraph {
        offsets,
        neighbors,
        neighbor_sims,
        thetas,
        targets: targets.to_vec(),
        candidate_counts: candidates.iter().map(CandidateSet::len).collect(),
        similarity_evals,
    })
}

impl DirectedGraph {
    pub fn nodes(&self) -> usize {
        self.thetas.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Similarities aligned with [`DirectedGraph::neighbors`].
    pub fn neighbor_sims(&self, i: usize) -> &[f32] {
        &self.neighbor_sims[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.nodes()).map(|i| self.degree(i)).collect()
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn candidate_counts(&self) -> &[usize] {
        &self.candidate_counts
    }

    pub fn edges_total(&self) -> usize {
        self.neighbors.len()
    }

    /// Number of cosine similarities evaluated while building the graph.
    pub fn similarity_evals(&self) -> u64 {
        self.similarity_evals
    }

    pub fn mean_degree(&self) -> f64 {
        self.edges_total() as f64 / self.nodes() as f64
    }

    /// Mean of `|m_i - d*_i|` over nodes.
    pub fn mean_abs_deviation(&self) -> f64 {
        let total: usize = (0..self.nodes())
            .map(|i| self.degree(i).abs_diff(self.targets[i]))
            .sum();
        total as f64 / self.nodes() as f64
    }

    pub fn stats(&self) -> GraphStats {
        let degrees = self.degrees();
        let max = degrees.iter().copied().max().unwrap_or(0);
        let mut degree_hist = vec![0usize; max + 1];
        for d in degrees {
            degree_hist[d] += 1;
        }
        let mut sorted = self.thetas.clone();
        sorted.sort_by(f64::total_cmp);
        let theta_quantiles = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|p| sorted[(p * (sorted.len() - 1) as f64).round() as usize])
            .collect();
        GraphStats {
            mean_degree: self.mean_degree(),
            degree_hist,
            mean_abs_deviation: self.mean_abs_deviation(),
            edges_total: self.edges_total(),
            theta_quantiles,
        }
    }
}

/// Summary written by the `graph --stats` command.
///
/// `degree_hist[k]` counts nodes with exactly `k` neighbors; `theta_quantiles`
/// holds the nearest-rank min, quartiles and max of the final thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub mean_degree: f64,
    pub degree_hist: Vec<usize>,
    pub mean_abs_deviation: f64,
    pub edges_total: usize,
    pub theta_quantiles: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{build_all_candidates, CandidateMode};
    use crate::tensor::Shape;

    fn row_of(vectors: &[Vec<f32>]) -> SimilarityRow {
        let c = vectors[0].len();
        let f = FeatureMap::new(1, vectors.len(), c, vectors.concat()).unwrap();
        let cand = CandidateSet {
            owner: 0,
            local: vec![],
            global: vec![],
            merged: (0..vectors.len()).collect(),
        };
        cosine_row(&f, &cand).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let r = row_of(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(r.sims[0], 1.0);
        assert_eq!(r.sims[1], 1.0);
        assert_eq!(r.sims[2], -1.0);
        assert!((r.sims[3] - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }

    #[test]
    fn cosine_zero_vector_guard() {
        let r = row_of(&[vec![0.0, 0.0], vec![1.0, 2.0]]);
        assert_eq!(r.sims, vec![0.0, 0.0]);
        let r = row_of(&[vec![3.0, 4.0], vec![0.0, 0.0]]);
        assert_eq!(r.sims, vec![1.0, 0.0]);
    }

    #[test]
    fn bisect_constant_row_keeps_all() {
        for target in 1..=6 {
            let sel = bisect_threshold(&[0.3; 6], target, 5).unwrap();
            assert_eq!(sel.members, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bisect_three_values_trace() {
        let sims = [0.9, 0.5, 0.1];
        let steps = bisection_trace(&sims, 1, 5).unwrap();
        let counts: Vec<usize> = steps.iter().map(|s| s.count).collect();
        // theta: mean 0.5 -> 0.7 -> 0.6 -> 0.55 -> 0.525 -> 0.5125
        assert_eq!(counts, vec![2, 1, 1, 1, 1]);
        let sel = bisect_threshold(&sims, 1, 5).unwrap();
        assert_eq!(sel.members, vec![0]);
        let want = (0.5f64 + 0.525f32 as f64) / 2.0;
        assert!((sel.theta - 0.5125).abs() < 1e-6, "{} vs {want}", sel.theta);
    }

    #[test]
    fn bisect_keep_all_target() {
        let sims = [0.8, -0.2, 0.33, 0.1, 0.95, -0.7];
        let sel = bisect_threshold(&sims, sims.len(), 5).unwrap();
        assert_eq!(sel.degree(), sims.len());
    }

    #[test]
    fn bisect_errors() {
        assert!(matches!(bisect_threshold(&[], 1, 5), Err(GfaError::Domain(_))));
        assert!(bisect_threshold(&[0.1, 0.2], 0, 5).is_err());
        assert!(bisect_threshold(&[0.1, 0.2], 3, 5).is_err());
        assert!(matches!(
            bisect_threshold(&[0.1, 0.2], 1, 0),
            Err(GfaError::Config(_))
        ));
    }

    #[test]
    fn interval_halves_after_first_step() {
        let sims: Vec<f32> = (0..50).map(|k| ((k * 37) % 101) as f32 / 101.0).collect();
        let steps = bisection_trace(&sims, 7, 12).unwrap();
        for pair in steps.windows(2) {
            let before = pair[0].hi - pair[0].lo;
            let after = pair[1].hi - pair[1].lo;
            assert!((after - before / 2.0).abs() <= 1e-15 * before.max(1.0));
        }
    }

    #[test]
    fn single_node_image_self_loop() {
        let f = FeatureMap::new(1, 1, 3, vec![0.2, 0.1, -0.4]).unwrap();
        let cands = build_all_candidates(Shape::new(1, 1), 1, 1, CandidateMode::Both).unwrap();
        let g = build_graph(&f, &cands, &[1], 5).unwrap();
        assert_eq!(g.neighbors(0), &[0]);
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.similarity_evals(), 1);
    }

    #[test]
    fn keep_all_when_targets_saturate() {
        let f = FeatureMap::from_fn(6, 6, 2, |u, v, k| ((u * 3 + v * 5 + k * 7) % 11) as f32 - 5.0)
            .unwrap();
        let cands = build_all_candidates(f.shape(), 3, 2, CandidateMode::Both).unwrap();
        let targets: Vec<usize> = cands.iter().map(|c| c.len()).collect();
        let g = build_graph(&f, &cands, &targets, 5).unwrap();
        for (i, c) in cands.iter().enumerate() {
            assert_eq!(g.neighbors(i), c.merged.as_slice());
        }
        assert_eq!(g.mean_abs_deviation(), 0.0);
        let stats = g.stats();
        assert_eq!(stats.edges_total, g.similarity_evals() as usize);
        assert_eq!(stats.degree_hist.iter().sum::<usize>(), 36);
        assert_eq!(stats.theta_quantiles.len(), 5);
    }

    #[test]
    fn build_graph_shape_errors() {
        let f = FeatureMap::filled(2, 2, 1, 1.0).unwrap();
        let cands = build_all_candidates(f.shape(), 3, 2, CandidateMode::LocalOnly).unwrap();
        assert!(build_graph(&f, &cands[..3], &[1; 3], 5).is_err());
        assert!(build_graph(&f, &cands, &[1; 4], 0).is_err());
        assert!(build_graph(&f, &cands, &[1, 1, 1, 99], 5).is_err());
    }
}
