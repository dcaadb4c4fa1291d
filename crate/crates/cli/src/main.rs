//! The `jiio` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jiio_cli::commands::{run, AttackMethod, InverseMode, RunOptions};
use jiio_cli::config::{Command, RunConfig};
use jiio_cli::CliError;

#[derive(Parser)]
#[command(name = "jiio", version, about = "Joint inference and input optimization for deep equilibrium models")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`[section]` / `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data, initialization and sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Record measured wall-clock times in CSV output (zeros otherwise).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unsup,
    Sup,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Jiio,
    Pgd,
}

#[derive(Subcommand)]
enum Sub {
    /// Train a generative model with jointly optimized latents.
    FitGen(Common),
    /// Fit latents for a dataset under a fixed model.
    Latent(Common),
    /// Inverse problems: denoising or mask-supervised training.
    Invprob {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Attack a clean-trained classifier.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Adversarial training and robust evaluation.
    Advtrain(Common),
    /// Meta-learning with per-task input vectors.
    Meta(Common),
    /// Compare fixed-point solvers.
    BenchSolvers(Common),
    /// Layer evaluations of the joint solve versus the Adam baseline.
    BenchEfficiency(Common),
    /// Check outer gradients against finite differences.
    Gradcheck(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, common, mode, method) = match cli.command {
        Sub::FitGen(c) => (Command::FitGen, c, None, None),
        Sub::Latent(c) => (Command::Latent, c, None, None),
        Sub::Invprob { common, mode } => (
            Command::Invprob,
            common,
            Some(match mode {
                ModeArg::Unsup => InverseMode::Unsup,
                ModeArg::Sup => InverseMode::Sup,
            }),
            None,
        ),
        Sub::Attack { common, method } => (
            Command::Attack,
            common,
            None,
            Some(match method {
                MethodArg::Jiio => AttackMethod::Jiio,
                MethodArg::Pgd => AttackMethod::Pgd,
            }),
        ),
        Sub::Advtrain(c) => (Command::Advtrain, c, None, None),
        Sub::Meta(c) => (Command::Meta, c, None, None),
        Sub::BenchSolvers(c) => (Command::BenchSolvers, c, None, None),
        Sub::BenchEfficiency(c) => (Command::BenchEfficiency, c, None, None),
        Sub::Gradcheck(c) => (Command::Gradcheck, c, None, None),
    };
    match execute(command, common, mode, method) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(
    command: Command,
    common: Common,
    mode: Option<InverseMode>,
    method: Option<AttackMethod>,
) -> Result<Vec<String>, CliError> {
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {} threads: {e}", common.threads)))?;
    }
    let config = match &common.config {
        Some(p) => RunConfig::load(command, p)?,
        None => RunConfig::defaults(command),
    };
    run(&RunOptions {
        config,
        seed: common.seed,
        out: common.out,
        wall_clock: common.wall_clock,
        mode,
        method,
    })
}
