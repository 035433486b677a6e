use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use funcprob_cli::compare::{compare, load_side};
use funcprob_cli::config::ExperimentConfig;
use funcprob_cli::runner::{replay, run, EstimatorKind};

#[derive(Parser)]
#[command(
    name = "funcprob",
    about = "Estimate and compare the function probabilities of optimiser-trained and Bayesian neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = default pool).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the optimiser's function distribution by repeated training.
    SampleOpt(RunArgs),
    /// Sample the exact GP regression posterior (MSE route).
    SampleGpMse(RunArgs),
    /// Sample the EP-approximated 0-1 posterior.
    SampleGpEp(RunArgs),
    /// EP ratio-of-likelihoods log probabilities for given functions.
    EpProb {
        #[command(flatten)]
        run: RunArgs,
        /// Frequency-table CSV naming the functions to price.
        #[arg(long)]
        functions: PathBuf,
    },
    /// Sample the infinite-width gradient-flow output distribution.
    Ntk(RunArgs),
    /// Direct rejection sampling of parameters on a Boolean system.
    Abi(RunArgs),
    /// Probability-versus-error curve via EP.
    ErrorCurve(RunArgs),
    /// Critical sample ratio of one trained network.
    Csr(RunArgs),
    /// Compare two result files (tables or EP log probabilities).
    Compare {
        table_a: PathBuf,
        table_b: PathBuf,
        /// Output directory for the comparison bundle.
        #[arg(long)]
        out: PathBuf,
        /// Truth labelling (hex) for error colouring.
        #[arg(long)]
        truth: Option<String>,
        /// Minimum per-table count for the joint-set statistics.
        #[arg(long, default_value_t = funcprob::funcspace::DEFAULT_MIN_COUNT)]
        min_count: u64,
        /// Keep raw EP probabilities instead of unit-sum renormalisation.
        #[arg(long)]
        no_renormalise: bool,
    },
    /// Re-execute a run from its manifest and verify byte-identical outputs.
    Replay {
        manifest: PathBuf,
        /// Directory for the replayed outputs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .context("no output directory: pass --out or set out_dir in the config")?;
    Ok((config, out))
}

fn execute(args: &RunArgs, kind: EstimatorKind, functions: Option<PathBuf>) -> Result<()> {
    let (config, out) = load_config(args)?;
    let output = run(&config, kind, &out, args.jobs, functions.as_deref())?;
    println!("{}: wrote {} result file(s) to {}", kind.name(), output.result_files.len(), out.display());
    for (k, v) in &output.notes {
        println!("  {k} = {v}");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::SampleOpt(args) => execute(&args, EstimatorKind::Opt, None),
        Command::SampleGpMse(args) => execute(&args, EstimatorKind::GpMse, None),
        Command::SampleGpEp(args) => execute(&args, EstimatorKind::GpEp, None),
        Command::EpProb { run, functions } => {
            execute(&run, EstimatorKind::EpProb, Some(functions))
        }
        Command::Ntk(args) => execute(&args, EstimatorKind::Ntk, None),
        Command::Abi(args) => execute(&args, EstimatorKind::Abi, None),
        Command::ErrorCurve(args) => execute(&args, EstimatorKind::ErrorCurve, None),
        Command::Csr(args) => execute(&args, EstimatorKind::Csr, None),
        Command::Compare {
            table_a,
            table_b,
            out,
            truth,
            min_count,
            no_renormalise,
        } => {
            let a = load_side(&table_a, !no_renormalise)?;
            let b = load_side(&table_b, !no_renormalise)?;
            let truth = truth
                .map(|hex| {
                    funcprob::funcspace::BinaryFunction::from_hex(&hex, a.function_len())
                })
                .transpose()?;
            let bundle = compare(&a, &b, truth.as_ref(), min_count)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("comparison.json"),
                serde_json::to_string_pretty(&bundle.summary)?,
            )?;
            std::fs::write(out.join("points.csv"), &bundle.points_csv)?;
            std::fs::write(out.join("scatter.svg"), &bundle.svg)?;
            println!(
                "joint functions: {} | sum_a = {:.4} | sum_b = {:.4} | pearson(log,log) = {:.4}",
                bundle.summary.joint_count,
                bundle.summary.sum_a_on_joint,
                bundle.summary.sum_b_on_joint,
                bundle.summary.pearson_loglog
            );
            Ok(())
        }
        Command::Replay { manifest, out } => {
            let mismatches = replay(&manifest, &out)?;
            if mismatches.is_empty() {
                println!("replay: all outputs byte-identical");
                Ok(())
            } else {
                bail!("replay mismatch in: {}", mismatches.join(", "));
            }
        }
    }
}
