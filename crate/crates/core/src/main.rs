//! `dirfuzz` command-line entry point.
//!
//! Exit codes: 0 success, 1 general error, 2 usage error, 3 stage failure,
//! 4 isolated target, 5 timeout without reaching (prepare) or crashing
//! (fuzz) the target.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use dirfuzz::project::{self, FuzzOptions, PrepareOptions, ProjectConfig, EXIT_OK, EXIT_TIMEOUT};

#[derive(Parser)]
#[command(name = "dirfuzz", version, about = "LLM-assisted directed fuzzing")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the SA, RAG, Opt and Mutator stages and write the bundle.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Answer every LLM query from this scripted fixture.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Time limit for seed optimization (e.g. 90s, 1h).
        #[arg(long, value_parser = humantime::parse_duration)]
        opt_budget: Option<Duration>,
        /// Replace an existing bundle.
        #[arg(long)]
        force: bool,
    },
    /// Run the directed fuzzing campaign from a prepared bundle.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = humantime::parse_duration)]
        duration: Option<Duration>,
        #[arg(long)]
        workers: Option<usize>,
        /// Fraction of mutations drawn from the bug-specific program.
        #[arg(long)]
        mix_ratio: Option<f64>,
        /// Ignore the synthesized mutator.
        #[arg(long)]
        random_only: bool,
        #[arg(long)]
        rng_seed: Option<u64>,
        /// Start from this input instead of the bundle seeds.
        #[arg(long)]
        seed: Option<PathBuf>,
        /// Stop after this many executions.
        #[arg(long)]
        max_execs: Option<u64>,
        /// Mutator refresh period; 0s disables refresh.
        #[arg(long, value_parser = humantime::parse_duration)]
        refresh: Option<Duration>,
        /// Keep fuzzing after the first crash at the target.
        #[arg(long)]
        keep_going: bool,
    },
    /// Print the stage-timing and campaign report of a work directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, project::ProjectError> {
    match cli.command {
        Cmd::Prepare {
            config,
            fixture,
            opt_budget,
            force,
        } => {
            let cfg = ProjectConfig::load(&config)?;
            let out = project::prepare(
                &cfg,
                &PrepareOptions {
                    fixture,
                    opt_budget,
                    force,
                },
            )?;
            println!("status: {}", out.status.as_str());
            println!("target: {}", out.target_function);
            println!("command: {}", out.command);
            println!("llm requests: {}", out.llm_requests);
            if out.random_only {
                println!("mutator: none accepted, campaign will use random mutation only");
            }
            print!("{}", dirfuzz::campaign::render_report(&out.timings, None));
            Ok(out.exit_code())
        }
        Cmd::Fuzz {
            config,
            duration,
            workers,
            mix_ratio,
            random_only,
            rng_seed,
            seed,
            max_execs,
            refresh,
            keep_going,
        } => {
            if let Some(r) = mix_ratio {
                if !(0.0..=1.0).contains(&r) {
                    eprintln!("error: --mix-ratio must be within [0, 1]");
                    return Ok(project::EXIT_USAGE);
                }
            }
            let cfg = ProjectConfig::load(&config)?;
            let stats = project::fuzz(
                &cfg,
                &FuzzOptions {
                    duration,
                    workers,
                    mix_ratio,
                    random_only,
                    rng_seed,
                    seed_file: seed,
                    max_execs,
                    refresh,
                    keep_going,
                },
            )?;
            print!("{}", project::report(&cfg.work_dir)?);
            Ok(if stats.found_target_crash() {
                EXIT_OK
            } else {
                EXIT_TIMEOUT
            })
        }
        Cmd::Report { dir } => {
            print!("{}", project::report(&dir)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
