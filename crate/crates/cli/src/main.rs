//! `sam-dg`: spectral mixup augmentation, visualization, and
//! leave-one-domain-out training from the command line.

mod augment;
mod config;
mod output;
mod run;
mod visualize;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use sam_core::Exec;

use crate::config::RunConfigFile;

#[derive(Parser, Debug)]
#[command(name = "sam-dg", version, about = "Fourier-domain semantic-aware mixup for domain generalization")]
struct Cli {
    /// TOML run configuration; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random choice (pairing, λ, initialization, batching).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for per-sample parallel work.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Export augmented images with JSON sidecars.
    Augment(augment::AugmentArgs),
    /// Amplitude/phase reconstructions or a mixup grid for one pair.
    Visualize(visualize::VisualizeArgs),
    /// Train on the source domains and test on the held-out one.
    Train(run::TrainArgs),
    /// Per-domain accuracy of a checkpoint.
    Eval(run::EvalArgs),
    /// Ours plus Models A-H on shared folds and seeds.
    Ablate(run::AblateArgs),
}

/// Settings shared by every command after merging flags and file.
pub struct Context {
    pub file: RunConfigFile,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub exec: Exec,
}

fn dispatch(command: Command, ctx: &Context) -> Result<()> {
    match command {
        Command::Augment(a) => augment::run(a, ctx),
        Command::Visualize(a) => visualize::run(a, ctx),
        Command::Train(a) => run::train(a, ctx),
        Command::Eval(a) => run::eval(a, ctx),
        Command::Ablate(a) => run::ablate(a, ctx),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let jobs = cli.jobs.or(file.jobs);
    let ctx = Context {
        seed: cli.seed.or(file.seed),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("sam-out")),
        exec: exec_for(jobs),
        file,
    };
    std::fs::create_dir_all(&ctx.out)?;
    with_pool(jobs, || dispatch(cli.command, &ctx))
}

fn exec_for(jobs: Option<usize>) -> Exec {
    match jobs {
        Some(1) => Exec::Sequential,
        _ => Exec::default(),
    }
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T>(_jobs: Option<usize>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
