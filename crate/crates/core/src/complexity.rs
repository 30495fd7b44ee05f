//! Per-node complexity scores and degree budgeting.
//!
//! The default score is the cross-channel RMS of Sobel gradient magnitudes.
//! A global edge budget `B = N * avg_degree` is split across nodes in
//! proportion to their scores and rounded into integer target degrees.

use serde::{Deserialize, Serialize};

use crate::error::{GfaError, Result};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreStrategy {
    /// Every node scores equally, giving uniform target degrees.
    None,
    Sobel,
    RescalingResidual,
    LocalEntropy,
}

/// How per-channel quantities are reduced to one value per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Rms,
    Mean,
}

impl Pooling {
    fn pool(self, values: impl Iterator<Item = f64>, count: usize) -> f64 {
        match self {
            Pooling::Rms => (values.map(|v| v * v).sum::<f64>() / count as f64).sqrt(),
            Pooling::Mean => values.sum::<f64>() / count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub strategy: ScoreStrategy,
    pub pooling: Pooling,
    pub avg_degree: usize,
}

/// Per-channel horizontal and vertical Sobel responses, laid out like the
/// source feature map.
#[derive(Debug, Clone)]
pub struct GradientMaps {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
}

impl GradientMaps {
    pub fn magnitude(&self, row: usize, col: usize, channel: usize) -> f64 {
        let k = (row * self.width + col) * self.channels + channel;
        self.sx[k].hypot(self.sy[k])
    }
}

/// 3x3 Sobel responses with replicate-edge padding.
///
/// Applied as a correlation with `Kx = [[-1,0,1],[-2,0,2],[-1,0,1]]` and
/// `Ky = Kx^T`, so a ramp increasing along columns gives positive `Sx`. The
/// kernels are separable; each is evaluated as a smoothing pass along one axis
/// and a central difference along the other.
pub fn sobel_gradients(f: &FeatureMap) -> GradientMaps {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let at = |u: usize, v: usize, k: usize| f64::from(f.at(u, v, k));
    let idx = |u: usize, v: usize, k: usize| (u * w + v) * c + k;

    // Horizontal pass: central difference and [1,2,1] smoothing along columns.
    let mut diff_h = vec![0.0; h * w * c];
    let mut smooth_h = vec![0.0; h * w * c];
    for u in 0..h {
        for v in 0..w {
            let (l, r) = (v.saturating_sub(1), (v + 1).min(w - 1));
            for k in 0..c {
                diff_h[idx(u, v, k)] = at(u, r, k) - at(u, l, k);
                smooth_h[idx(u, v, k)] = at(u, l, k) + 2.0 * at(u, v, k) + at(u, r, k);
            }
        }
    }

    // Vertical pass: smoothing for Sx, central difference for Sy.
    let mut sx = vec![0.0; h * w * c];
    let mut sy = vec![0.0; h * w * c];
    for u in 0..h {
        let (t, b) = (u.saturating_sub(1), (u + 1).min(h - 1));
        for v in 0..w {
            for k in 0..c {
                sx[idx(u, v, k)] =
                    diff_h[idx(t, v, k)] + 2.0 * diff_h[idx(u, v, k)] + diff_h[idx(b, v, k)];
                sy[idx(u, v, k)] = smooth_h[idx(b, v, k)] - smooth_h[idx(t, v, k)];
            }
        }
    }

    GradientMaps {
        height: h,
        width: w,
        channels: c,
        sx,
        sy,
    }
}

/// RMS-Gradient score: per-channel gradient magnitudes pooled across channels.
pub fn rms_g_score(f: &FeatureMap, pooling: Pooling) -> Vec<f64> {
    let g = sobel_gradients(f);
    let c = g.channels;
    (0..f.nodes())
        .map(|i| {
            let (u, v) = (i / g.width, i % g.width);
            pooling.pool((0..c).map(|k| g.magnitude(u, v, k)), c)
        })
        .collect()
}

/// Scores for `strategy`. `Sobel` is [`rms_g_score`]; `None` is all ones.
pub fn compute_scores(f: &FeatureMap, strategy: ScoreStrategy, pooling: Pooling) -> Vec<f64> {
    match strategy {
        ScoreStrategy::None => vec![1.0; f.nodes()],
        ScoreStrategy::Sobel => rms_g_score(f, pooling),
        ScoreStrategy::RescalingResidual => rescaling_residual(f, pooling),
        ScoreStrategy::LocalEntropy => local_entropy(f, pooling),
    }
}

/// Baseline scores other than Sobel.
pub fn alt_scores(f: &FeatureMap, strategy: ScoreStrategy, pooling: Pooling) -> Result<Vec<f64>> {
    match strategy {
        ScoreStrategy::RescalingResidual => Ok(rescaling_residual(f, pooling)),
        ScoreStrategy::LocalEntropy => Ok(local_entropy(f, pooling)),
        other => Err(GfaError::config(format!(
            "{other:?} is not a baseline scoring strategy"
        ))),
    }
}

/// Magnitude of `F - up(down(F))` with 2x average-pool down and nearest up.
///
/// Trailing odd rows/columns form partial blocks averaged over the pixels they
/// contain.
fn rescaling_residual(f: &FeatureMap, pooling: Pooling) -> Vec<f64> {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let (dh, dw) = (h.div_ceil(2), w.div_ceil(2));
    let mut down = vec![0.0f64; dh * dw * c];
    let mut counts = vec![0usize; dh * dw];
    for u in 0..h {
        for v in 0..w {
            let b = (u / 2) * dw + v / 2;
            counts[b] += 1;
            for k in 0..c {
                down[b * c + k] += f64::from(f.at(u, v, k));
            }
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        for k in 0..c {
            down[b * c + k] /= n as f64;
        }
    }
    (0..h * w)
        .map(|i| {
            let (u, v) = (i / w, i % w);
            let b = (u / 2) * dw + v / 2;
            pooling.pool(
                (0..c).map(|k| (f64::from(f.at(u, v, k)) - down[b * c + k]).abs()),
                c,
            )
        })
        .collect()
}

const ENTROPY_BINS: usize = 8;

/// Shannon entropy (bits) of an 8-bin histogram over each 3x3 neighborhood.
///
/// Channels are first pooled into one value per pixel; bins span the global
/// range of the pooled map. Borders use replicate padding, so every
/// neighborhood has nine samples.
fn local_entropy(f: &FeatureMap, pooling: Pooling) -> Vec<f64> {
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let pooled: Vec<f64> = (0..h * w)
        .map(|i| pooling.pool(f.row(i).iter().map(|&x| f64::from(x)), c))
        .collect();
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let bins: Vec<usize> = pooled
        .iter()
        .map(|&p| {
            if range > 0.0 {
                (((p - lo) / range * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1)
            } else {
                0
            }
        })
        .collect();
    (0..h * w)
        .map(|i| {
            let (u, v) = (i / w, i % w);
            let mut hist = [0usize; ENTROPY_BINS];
            for du in -1isize..=1 {
                for dv in -1isize..=1 {
                    let r = (u as isize + du).clamp(0, h as isize - 1) as usize;
                    let s = (v as isize + dv).clamp(0, w as isize - 1) as usize;
                    hist[bins[r * w + s]] += 1;
                }
            }
            hist.iter()
                .filter(|&&n| n > 0)
                .map(|&n| {
                    let p = n as f64 / 9.0;
                    p * (1.0 / p).log2()
                })
                .sum()
        })
        .collect()
}

/// Scores turned into weights, real quotas and clipped integer targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityScores {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub quotas: Vec<f64>,
    pub targets: Vec<usize>,
    pub budget: f64,
}

/// Splits `B = N * avg_degree` over nodes by score.
///
/// `w_i = s_i / sum(s)` (uniform when every score is zero), `q_i = B * w_i`,
/// and `d*_i = clip(round(q_i), 1, n_i)` with half-away-from-zero rounding.
/// Targets are not renormalized after clipping.
pub fn allocate_quotas(
    scores: &[f64],
    avg_degree: usize,
    candidate_sizes: &[usize],
) -> Result<ComplexityScores> {
    let n = scores.len();
    if n == 0 {
        return Err(GfaError::domain("no nodes to allocate"));
    }
    if candidate_sizes.len() != n {
        return Err(GfaError::config(format!(
            "{} candidate sizes for {n} scores",
            candidate_sizes.len()
        )));
    }
    if avg_degree == 0 {
        return Err(GfaError::config("average degree must be at least 1"));
    }
    if let Some((i, s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !s.is_finite() || **s < 0.0)
    {
        return Err(GfaError::domain(format!("score {s} at node {i} is not a finite nonnegative value")));
    }
    if let Some(i) = candidate_sizes.iter().position(|&c| c == 0) {
        return Err(GfaError::domain(format!("node {i} has no candidates")));
    }

    let budget = (n * avg_degree) as f64;
    let total: f64 = scores.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let quotas: Vec<f64> = weights.iter().map(|w| budget * w).collect();
    let targets = quotas
        .iter()
        .zip(candidate_sizes)
        .map(|(q, &cap)| {
            // f64::round rounds half away from zero; the cast saturates.
            (q.round() as usize).clamp(1, cap)
        })
        .collect();

    Ok(ComplexityScores {
        scores: scores.to_vec(),
        weights,
        quotas,
        targets,
        budget,
    })
}
