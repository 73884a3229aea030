//! `mlgc` — multi-label graph condensation from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlgc::condense::Method;
use mlgc::init::InitKind;
use mlgc::losses::LossKind;
use mlgc::Error;

#[derive(Debug, Parser)]
#[command(name = "mlgc", version, about = "Multi-label graph dataset condensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a planted multi-label block-model dataset.
    MakeData(MakeDataArgs),
    /// Condense a dataset into a small synthetic graph.
    Condense(CondenseArgs),
    /// Train on a synthetic (or the original) graph and test on the original.
    Eval(EvalArgs),
    /// Emit label-correlation and class-distribution tables.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct Shared {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Worker threads for independent evaluation seeds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct MakeDataArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    p_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Gcond,
    Gcdm,
    Sgdd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gcond => Method::Gcond,
            MethodArg::Gcdm => Method::Gcdm,
            MethodArg::Sgdd => Method::Sgdd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Random,
    Herding,
    Kcenter,
    Prob,
}

impl From<InitArg> for InitKind {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Random => InitKind::Random,
            InitArg::Herding => InitKind::Herding,
            InitArg::Kcenter => InitKind::KCenter,
            InitArg::Prob => InitKind::Probability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Bce,
    Softmargin,
    Ce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => LossKind::Bce,
            LossArg::Softmargin => LossKind::SoftMargin,
            LossArg::Ce => LossKind::Ce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// K-Center initialization, BCE loss, learned structure.
    PaperBest,
}

#[derive(Debug, Args)]
struct CondenseArgs {
    #[command(flatten)]
    shared: Shared,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Gcond)]
    method: MethodArg,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Initializer [default: kcenter].
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Matching loss [default: bce].
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Positive-class weights and per-class matching coefficients.
    #[arg(long)]
    weighted: bool,
    /// Condensation ratio in (0, 1].
    #[arg(long = "crate", default_value_t = 0.1)]
    c_rate: f64,
    /// Graphless synthetic graph (identity propagation).
    #[arg(long)]
    no_structure: bool,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 5)]
    outer: usize,
    #[arg(long, default_value_t = 50)]
    inner: usize,
    #[arg(long, default_value_t = 10)]
    tau1: usize,
    /// Structure steps per cycle [default: 5, or 0 with --no-structure].
    #[arg(long)]
    tau2: Option<usize>,
    #[arg(long, default_value_t = 3)]
    tau_theta: usize,
    #[arg(long, default_value_t = 1e-2)]
    eta1: f64,
    #[arg(long, default_value_t = 1e-3)]
    eta2: f64,
    #[arg(long, default_value_t = 1e-2)]
    eta_theta: f64,
    /// Hidden width of the surrogate GNN and structure generator.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Sgc,
    Gcn,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    data: PathBuf,
    /// Synthetic graph directory.
    #[arg(long, required_unless_present = "whole_baseline", conflicts_with = "whole_baseline")]
    synthetic: Option<PathBuf>,
    /// Train on the original training split instead.
    #[arg(long)]
    whole_baseline: bool,
    #[arg(long, value_enum, default_value_t = ModelArg::Gcn)]
    model: ModelArg,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Propagation depth for `--model sgc`.
    #[arg(long, default_value_t = 2)]
    hops: usize,
    /// Number of evaluation seeds, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Bce)]
    loss: LossArg,
    #[arg(long)]
    weighted: bool,
    /// Leave rows with no positive logit without any predicted label.
    #[arg(long)]
    no_force_positive: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    synthetic: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Validation(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Domain(_) => 3,
        Error::Divergence(_) => 4,
        Error::ScaleUnsupported(_) => 5,
        Error::State(_) | Error::Contract(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::MakeData(args) => commands::make_data(&args),
        Command::Condense(args) => commands::condense(&args, &argv),
        Command::Eval(args) => commands::eval(&args, &argv),
        Command::Inspect(args) => commands::inspect(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mlgc: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
