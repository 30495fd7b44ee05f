//! Graph-based feature aggregation for image feature maps.
//!
//! The pipeline per pass:
//!
//! 1. [`sampling`] collects each pixel's candidates from a dense local window
//!    and a strided global lattice.
//! 2. [`complexity`] scores pixels (Sobel RMS-gradient by default) and splits
//!    an edge budget into per-node target degrees.
//! 3. [`graph`] thresholds cosine similarity per node, finding the threshold
//!    by a fixed number of bisection steps.
//! 4. [`aggregate`] mixes projected neighbor features with softmax weights.
//!
//! [`oracle`] holds slow, independent reference implementations used by the
//! test suites. [`codec`] and [`cli`] provide file formats and the `gfa`
//! command line tool.

pub mod aggregate;
pub mod cli;
pub mod codec;
pub mod complexity;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod sampling;
pub mod tensor;

pub use aggregate::{
    aggregate_pass, attention_weights, gfa_block, gfa_block_detailed, run_pipeline, GfaConfig,
    PassOrder, PassWeights, ProjectionWeights, StageSpec,
};
pub use complexity::{allocate_quotas, rms_g_score, sobel_gradients, Pooling, ScoreStrategy};
pub use error::{GfaError, Result};
pub use graph::{bisect_threshold, build_graph, cosine_row, DirectedGraph, SimilarityRow};
pub use sampling::{build_candidates, sample_global, sample_local, CandidateMode, CandidateSet};
pub use tensor::{FeatureMap, NodeIndex, Shape};
