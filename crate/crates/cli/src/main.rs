//! `alps`: budgeted annotation for sequence labeling with a learned
//! selection policy. Subcommands cover policy learning, transfer to a new
//! pool, cold-start selection, the random/uncertainty baselines, run
//! summaries, and a synthetic benchmark generator.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alps_core::{Error, Result};

mod commands;
mod config;

use config::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "alps", version, about = "Budgeted annotation with a learned selection policy")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn a selection policy over labeled source data
    TrainPolicy(RunArgs),
    /// Apply a trained policy to a new pool, fine-tuning as it goes
    Transfer(RunArgs),
    /// One frozen greedy pass; annotation deferred until after selection
    Coldstart(RunArgs),
    /// Random or uncertainty selection at the same budget
    Baseline(RunArgs),
    /// Summarize finished runs against the random reference
    Report(ReportArgs),
    /// Generate a synthetic two-language benchmark with demo configs
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Run a seed range `a..b` (half-open), one output directory each
    #[arg(long, conflicts_with_all = ["seed", "out"])]
    seeds: Option<String>,
    /// Override the configured budget
    #[arg(long)]
    budget: Option<usize>,
    /// Override the configured episode count
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Finished run directories (each holding a curve.csv)
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Budget for cost-reduction percentages; default: largest annotation
    /// count on the random reference curves
    #[arg(long)]
    budget: Option<usize>,
    /// Summary CSV path
    #[arg(long, default_value = "summary.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for corpora, embeddings, and demo configs
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    emb_dim: usize,
    /// Training sentences per language
    #[arg(long, default_value_t = 120)]
    sentences: usize,
    #[arg(long, default_value_t = 40)]
    heldout: usize,
    #[arg(long, default_value_t = 40)]
    test: usize,
    /// Fraction of tokens drawn from the entity vocabulary; lower rates
    /// leave more worthless sentences for the policy to skip
    #[arg(long, default_value_t = 0.12)]
    entity_rate: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) => 1,
        _ => 2,
    }
}

fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>> {
    let parts: Vec<&str> = s.split("..").collect();
    let err = || Error::Config(format!("--seeds wants a half-open range like 0..10, got {s:?}"));
    if parts.len() != 2 {
        return Err(err());
    }
    let a: u64 = parts[0].parse().map_err(|_| err())?;
    let b: u64 = parts[1].parse().map_err(|_| err())?;
    if a >= b {
        return Err(err());
    }
    Ok(a..b)
}

fn run_command(args: &RunArgs, expect: &[Mode]) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if !expect.contains(&cfg.mode) {
        return Err(Error::Config(format!(
            "config mode {} does not fit this subcommand",
            cfg.mode.as_str()
        )));
    }
    if let Some(b) = args.budget {
        cfg.run.budget = b;
    }
    if let Some(n) = args.episodes {
        cfg.run.episodes = n;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.run.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    match &args.seeds {
        None => commands::dispatch(&cfg, cfg.run.seed),
        Some(range) => {
            for seed in parse_seed_range(range)? {
                let pinned = cfg.for_seed(seed);
                commands::dispatch(&pinned, seed)?;
            }
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::TrainPolicy(a) => run_command(a, &[Mode::Learn]),
        Cmd::Transfer(a) => run_command(a, &[Mode::Transfer]),
        Cmd::Coldstart(a) => run_command(a, &[Mode::Coldstart]),
        Cmd::Baseline(a) => run_command(a, &[Mode::BaselineRandom, Mode::BaselineUncertainty]),
        Cmd::Report(a) => commands::report(&a.dirs, a.budget, &a.out),
        Cmd::Synth(a) => commands::synth(&commands::SynthOpts {
            out: a.out.clone(),
            seed: a.seed,
            emb_dim: a.emb_dim,
            sentences: a.sentences,
            heldout: a.heldout,
            test: a.test,
            entity_rate: a.entity_rate,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
