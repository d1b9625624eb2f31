//! Experiment harness behind the `flowacc` binary.
//!
//! ```text
//! flowacc synth       random scenes -> <root>/dataset
//! flowacc accumulate  dataset -> <root>/results/<seq>/<direction>/{result.flo, trace/}
//! flowacc eval        results vs ground truth -> <root>/reports/eval_*.csv
//! flowacc occ-stats   ground-truth masks -> <root>/reports/occ_*.csv
//! ```
//!
//! `<root>` comes from `--root`, then `$FLOWACC_OUT`, then `./flowacc-out`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flowacc::synth::Difficulty;

pub mod commands;
pub mod config;
pub mod stats;

use config::Directions;

pub const OUT_ENV: &str = "FLOWACC_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "flowacc",
    version,
    about = "Long-range optical flow by forward and backward accumulation"
)]
pub struct Cli {
    /// Default parent directory for datasets, results and reports.
    #[arg(long, global = true, env = OUT_ENV, default_value = "flowacc-out")]
    pub root: PathBuf,

    /// Worker threads; 0 uses every available core. Never affects outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random layered scenes with ground-truth flows and masks.
    Synth(SynthArgs),
    /// Accumulate local flows of every sequence into F(1, N).
    Accumulate(AccumulateArgs),
    /// Score accumulated flows against ground truth.
    Eval(EvalArgs),
    /// Occlusion proportion of O(1, 1+d) for every sequence and interval d.
    OccStats(OccStatsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Dataset directory [default: <root>/dataset].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file whose [synth] table provides defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of sequences.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// easy (at most 4 px/frame) or hard (at most 16 px/frame).
    #[arg(long)]
    pub difficulty: Option<Difficulty>,
    /// Square canvas side in pixels.
    #[arg(long)]
    pub canvas: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Split label; sequences of different splits draw independent seeds.
    #[arg(long)]
    pub split: Option<String>,
    /// Sample sub-pixel velocities.
    #[arg(long)]
    pub real_valued: bool,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AccumulateArgs {
    /// Dataset directory [default: <root>/dataset].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Results directory [default: <root>/results].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file whose [accumulate] table provides defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// forward, backward or both.
    #[arg(long)]
    pub direction: Option<Directions>,
    /// consistency, range-map or ground-truth.
    #[arg(long)]
    pub detector: Option<String>,
    /// Absolute slack of the consistency check, in squared pixels.
    #[arg(long)]
    pub tol_abs: Option<f64>,
    /// Relative slack of the consistency check.
    #[arg(long)]
    pub tol_rel: Option<f64>,
    /// zero, extrapolate, nearest or ground-truth.
    #[arg(long)]
    pub solver: Option<String>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Results directory [default: <root>/results].
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Dataset directory [default: the one recorded in the results].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Report directory [default: <root>/reports].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OccStatsArgs {
    /// Dataset directory [default: <root>/dataset].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Report directory [default: <root>/reports].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()?;
    let root = cli.root;
    pool.install(|| match cli.command {
        Command::Synth(a) => {
            commands::synth(&root, &a).map(|out| println!("dataset written to {}", out.display()))
        }
        Command::Accumulate(a) => commands::accumulate(&root, &a)
            .map(|out| println!("results written to {}", out.display())),
        Command::Eval(a) => {
            commands::eval(&root, &a).map(|out| println!("reports written to {}", out.display()))
        }
        Command::OccStats(a) => commands::occ_stats(&root, &a)
            .map(|out| println!("statistics written to {}", out.display())),
    })
}
