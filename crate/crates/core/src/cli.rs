//! The `gfa` command line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on I/O or parse errors,
//! 3 on configuration errors. Diagnostics go to stderr; results are written
//! only to the files named on the command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aggregate::{
    block_seed, run_pipeline_with, GfaConfig, PassWeights, ProjectionWeights, StageSpec,
};
use crate::codec::{encode_pgm16, encode_tensor, read_feature_input, read_image, read_tensor, OutputSet};
use crate::complexity::{allocate_quotas, compute_scores, Pooling, ScoreStrategy};
use crate::error::{GfaError, Result};
use crate::graph::build_graph;
use crate::oracle::count_edges;
use crate::sampling::{build_all_candidates, build_candidates, CandidateMode};
use crate::tensor::{FeatureMap, NodeIndex};

#[derive(Debug, Parser)]
#[command(name = "gfa", version, about = "Content-adaptive graph feature aggregation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a per-pixel complexity score map as a 16-bit PGM.
    Score(ScoreArgs),
    /// Build one directed graph and report degree statistics.
    Graph(GraphArgs),
    /// Run GFA blocks over a tensor.
    Aggregate(AggregateArgs),
    /// Time graph construction over several image sizes, as CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    Sobel,
    RescalingResidual,
    LocalEntropy,
}

impl From<StrategyArg> for ScoreStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => ScoreStrategy::None,
            StrategyArg::Sobel => ScoreStrategy::Sobel,
            StrategyArg::RescalingResidual => ScoreStrategy::RescalingResidual,
            StrategyArg::LocalEntropy => ScoreStrategy::LocalEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Rms,
    Mean,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Rms => Pooling::Rms,
            PoolingArg::Mean => Pooling::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Both,
    LocalOnly,
    GlobalOnly,
}

impl From<ModeArg> for CandidateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Both => CandidateMode::Both,
            ModeArg::LocalOnly => CandidateMode::LocalOnly,
            ModeArg::GlobalOnly => CandidateMode::GlobalOnly,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with block hyperparameters; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// PPM (P6) or PGM (P5) image, or an FTEN tensor.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "sobel")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "rms")]
    pooling: PoolingArg,
    #[arg(long)]
    out: PathBuf,
    /// Min/max sidecar JSON; defaults to the output path with a .json extension.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Realized degree per node as a 16-bit PGM.
    #[arg(long)]
    degree_map: Option<PathBuf>,
    /// Node whose candidate set is written to --candidates-out.
    #[arg(long, requires = "candidates_out")]
    dump_candidates: Option<usize>,
    #[arg(long, requires = "dump_candidates")]
    candidates_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// FTEN projection of shape C x C x 1 (shared by both passes) or
    /// C x C x 2 (one channel per pass).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of consecutive blocks.
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    /// Output width for seeded projections; defaults to the input width.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Square image sides to time.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(GfaError),
}

impl From<GfaError> for CliError {
    fn from(e: GfaError) -> Self {
        CliError::Run(e)
    }
}

/// Exit status for a library error.
pub fn exit_code(e: &GfaError) -> i32 {
    match e {
        GfaError::Io { .. } | GfaError::Parse { .. } => 2,
        GfaError::Config(_) | GfaError::Index { .. } | GfaError::Domain(_) => 3,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let threads = match &cmd {
        Command::Score(_) => None,
        Command::Graph(a) => a.common.threads,
        Command::Aggregate(a) => a.common.threads,
        Command::Bench(a) => a.common.threads,
    };
    with_threads(threads, move || match cmd {
        Command::Score(a) => score(a),
        Command::Graph(a) => graph(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Bench(a) => bench(a),
    })
}

fn with_threads(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<(), CliError> + Send,
) -> Result<(), CliError> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| GfaError::config(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Loads a block config; unknown keys are rejected.
pub fn load_config(path: Option<&Path>) -> Result<GfaConfig> {
    let cfg = match path {
        None => GfaConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| GfaError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| GfaError::config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("plain data serializes");
    v.push(b'\n');
    v
}

#[derive(Serialize)]
struct ScoreRange {
    min: f64,
    max: f64,
}

/// Min-max normalizes scores into `0..=65535`; a flat map is all zeros.
pub fn quantize_scores(scores: &[f64]) -> (Vec<u16>, f64, f64) {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let q = scores
        .iter()
        .map(|&s| {
            if range > 0.0 {
                ((s - min) / range * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    (q, min, max)
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let f = if a.input.extension().is_some_and(|e| e == "ften") {
        read_tensor(&a.input)?
    } else {
        read_image(&a.input)?
    };
    let scores = compute_scores(&f, a.strategy.into(), a.pooling.into());
    let (q, min, max) = quantize_scores(&scores);
    let sidecar = a.sidecar.unwrap_or_else(|| a.out.with_extension("json"));
    let mut out = OutputSet::new();
    out.add(&a.out, encode_pgm16(f.height(), f.width(), &q)?);
    out.add(sidecar, json_bytes(&ScoreRange { min, max }));
    out.commit()?;
    Ok(())
}

fn graph(a: GraphArgs) -> Result<(), CliError> {
    if a.stats.is_none() && a.degree_map.is_none() && a.dump_candidates.is_none() {
        return Err(CliError::Usage(
            "graph needs at least one of --stats, --degree-map, --dump-candidates".into(),
        ));
    }
    let cfg = load_config(a.common.config.as_deref())?;
    let f = read_feature_input(&a.input)?;
    let mode: CandidateMode = a.mode.into();
    let mut out = OutputSet::new();

    if let (Some(node), Some(path)) = (a.dump_candidates, &a.candidates_out) {
        let set = build_candidates(NodeIndex(node), f.shape(), cfg.local_window, cfg.global_grid, mode)?;
        out.add(path, json_bytes(&set));
    }

    if a.stats.is_some() || a.degree_map.is_some() {
        let candidates = build_all_candidates(f.shape(), cfg.local_window, cfg.global_grid, mode)?;
        let sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
        let scores = compute_scores(&f, cfg.strategy, cfg.pooling);
        let quotas = allocate_quotas(&scores, cfg.avg_degree, &sizes)?;
        let g = build_graph(&f, &candidates, &quotas.targets, cfg.iterations)?;
        if let Some(path) = &a.stats {
            out.add(path, json_bytes(&g.stats()));
        }
        if let Some(path) = &a.degree_map {
            let degrees: Vec<u16> = g
                .degrees()
                .into_iter()
                .map(|d| d.min(u16::MAX as usize) as u16)
                .collect();
            out.add(path, encode_pgm16(f.height(), f.width(), &degrees)?);
        }
    }
    out.commit()?;
    Ok(())
}

/// Per-pass summaries of an `aggregate` run, one array entry per pass in
/// execution order.
#[derive(Debug, Serialize)]
pub struct AggregateStats {
    pub blocks: usize,
    pub pass_kind: Vec<String>,
    pub mean_degree: Vec<f64>,
    pub mean_abs_deviation: Vec<f64>,
    pub edges_total: Vec<usize>,
}

fn load_weights(path: &Path, c_in: usize) -> Result<PassWeights> {
    let t = read_tensor(path)?;
    if t.height() != c_in {
        return Err(GfaError::config(format!(
            "weights expect {} input channels, input has {c_in}",
            t.height()
        )));
    }
    match t.channels() {
        1 => {
            let w = ProjectionWeights::from_feature_map(&t)?;
            if w.c_in() != w.c_out() {
                return Err(GfaError::config(
                    "a single shared projection must be square so both passes chain",
                ));
            }
            Ok(PassWeights {
                first: w.clone(),
                second: w,
            })
        }
        2 => {
            if t.height() != t.width() {
                return Err(GfaError::config("per-pass projections must be square"));
            }
            let split = |k: usize| {
                let m: Vec<f32> = t.data().iter().skip(k).step_by(2).copied().collect();
                ProjectionWeights::new(t.height(), t.width(), m)
            };
            Ok(PassWeights {
                first: split(0)?,
                second: split(1)?,
            })
        }
        c => Err(GfaError::config(format!(
            "weight tensor must have 1 or 2 channels, got {c}"
        ))),
    }
}

fn aggregate(a: AggregateArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref())?;
    let f = read_feature_input(&a.input)?;
    let file_weights = a
        .weights
        .as_deref()
        .map(|p| load_weights(p, f.channels()))
        .transpose()?;
    let channels = match (&file_weights, a.channels) {
        (Some(w), Some(c)) if c != w.second.c_out() => {
            return Err(GfaError::config(format!(
                "--channels {c} disagrees with the weight file ({})",
                w.second.c_out()
            ))
            .into())
        }
        (Some(w), _) => w.second.c_out(),
        (None, Some(c)) => c,
        (None, None) => f.channels(),
    };
    let stage = StageSpec {
        blocks: a.blocks,
        config: cfg,
        channels,
    };
    let result = run_pipeline_with(&f, &[stage], |s, b, spec, c_in| match &file_weights {
        Some(w) => Ok(w.clone()),
        None => PassWeights::seeded(c_in, spec.channels, block_seed(spec.config.seed, s, b)),
    })?;

    let passes: Vec<_> = result.blocks.iter().flat_map(|b| b.passes.iter()).collect();
    let stats = AggregateStats {
        blocks: result.blocks.len(),
        pass_kind: passes
            .iter()
            .map(|p| serde_json::to_value(p.kind).expect("enum").as_str().unwrap_or("").to_owned())
            .collect(),
        mean_degree: passes.iter().map(|p| p.mean_degree).collect(),
        mean_abs_deviation: passes.iter().map(|p| p.mean_abs_deviation).collect(),
        edges_total: passes.iter().map(|p| p.edges_total).collect(),
    };
    let mut out = OutputSet::new();
    out.add(&a.out, encode_tensor(&result.output));
    if let Some(path) = &a.stats {
        out.add(path, json_bytes(&stats));
    }
    out.commit()?;
    Ok(())
}

/// One CSV row of the `bench` command.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub nodes: usize,
    pub candidates_total: usize,
    pub similarity_evals: u64,
    pub edges_total: usize,
    pub mean_degree: f64,
    pub mean_abs_deviation: f64,
    pub build_ms: f64,
}

/// Times candidate sampling, scoring, budgeting and graph construction on a
/// seeded random tensor; `build_ms` is the fastest of `repeats` runs.
pub fn bench_graph(
    height: usize,
    width: usize,
    channels: usize,
    cfg: &GfaConfig,
    repeats: usize,
) -> Result<BenchRow> {
    let f = FeatureMap::random_uniform(height, width, channels, cfg.seed)?;
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let candidates =
            build_all_candidates(f.shape(), cfg.local_window, cfg.global_grid, CandidateMode::Both)?;
        let sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
        let scores = compute_scores(&f, cfg.strategy, cfg.pooling);
        let quotas = allocate_quotas(&scores, cfg.avg_degree, &sizes)?;
        let g = build_graph(&f, &candidates, &quotas.targets, cfg.iterations)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        last = Some(g);
    }
    let g = last.expect("at least one repeat");
    let counts = count_edges(&g, cfg);
    Ok(BenchRow {
        height,
        width,
        nodes: counts.nodes,
        candidates_total: counts.candidates,
        similarity_evals: g.similarity_evals(),
        edges_total: counts.edges,
        mean_degree: g.mean_degree(),
        mean_abs_deviation: g.mean_abs_deviation(),
        build_ms: best,
    })
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref())?;
    if a.sizes.is_empty() {
        return Err(CliError::Usage("--sizes must list at least one size".into()));
    }
    let mut csv = String::from(
        "height,width,nodes,candidates_total,similarity_evals,edges_total,mean_degree,mean_abs_deviation,build_ms\n",
    );
    for &side in &a.sizes {
        let r = bench_graph(side, side, a.channels, &cfg, a.repeats)?;
        eprintln!("{side}x{side}: {:.2} ms", r.build_ms);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{:.4},{:.4},{:.3}",
            r.height,
            r.width,
            r.nodes,
            r.candidates_total,
            r.similarity_evals,
            r.edges_total,
            r.mean_degree,
            r.mean_abs_deviation,
            r.build_ms
        );
    }
    let mut out = OutputSet::new();
    out.add(&a.out, csv.into_bytes());
    out.commit()?;
    Ok(())
}
