//! Command-line driver: scenario runs, parameter sweeps, complexity tables,
//! and scenario listing, with deterministic CSV/JSON output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mee_rts::config::{
    load_config_or_manifest, write_manifest, write_msd_curves_csv, write_results_json,
    write_summary_csv, ExperimentConfig, OutputFormat,
};
use mee_rts::error::Error;
use mee_rts::harness::{run_scenario, scenario_catalog, sweep, RunResult};
use mee_rts::theory::{flops_mc_rtsl, flops_mee_rts, mee_backward_equation_counts};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mee-rts",
    about = "Robust RTS-type smoothing benchmarks under heavy-tailed noise",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML) or a previously emitted JSON manifest.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config's output.dir or current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output table format.
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Parallel Monte-Carlo worker count (also via MEE_RTS_JOBS).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit MSD curves, a summary, and a manifest.
    Run(RunArgs),
    /// Run the config's sweep block and emit one summary per swept value.
    Sweep(RunArgs),
    /// Print the flop-count comparison for given dimensions.
    Complexity {
        /// State dimension n.
        n: u64,
        /// Measurement dimension m.
        m: u64,
        /// Mean forward FPI count Mf.
        mf: u64,
        /// Mean backward FPI count Mb.
        mb: u64,
    },
    /// List the scenario catalog.
    ListScenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args, false),
        Command::Sweep(args) => cmd_run(args, true),
        Command::Complexity { n, m, mf, mb } => cmd_complexity(n, m, mf, mb),
        Command::ListScenarios => cmd_list_scenarios(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Domain(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_NUMERICAL),
            }
        }
    }
}

fn effective_jobs(cli_jobs: Option<usize>) -> Option<usize> {
    cli_jobs.or_else(|| {
        std::env::var("MEE_RTS_JOBS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|v| *v > 0)
    })
}

fn with_jobs<T>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, Error> + Send,
) -> Result<T, Error>
where
    T: Send,
{
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn cmd_run(args: RunArgs, is_sweep: bool) -> Result<(), Error> {
    let mut config: ExperimentConfig = load_config_or_manifest(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        config.output.dir = Some(dir.clone());
    }
    if let Some(fmt) = &args.format {
        config.output.format = OutputFormat::parse(fmt)?;
    }
    let out_dir = config.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let (spec, algorithms, mee) = config.resolve()?;
    let format = config.output.format;
    let jobs = effective_jobs(args.jobs);

    if is_sweep {
        let block = config
            .sweep
            .clone()
            .ok_or_else(|| Error::Config("field `sweep` is required for the sweep command".into()))?;
        let results = with_jobs(jobs, || {
            sweep(block.parameter, &block.values, &spec, &algorithms, &mee, config.seed)
        })?;
        for (value, result) in &results {
            let tag = format!("{}_{}", block.parameter.name(), value);
            emit_result(&out_dir, Some(&tag), result, format)?;
            println!(
                "{} = {value}: wrote results for scenario {}",
                block.parameter.name(),
                result.scenario
            );
        }
        write_manifest(&out_dir.join("manifest.json"), &config)?;
    } else {
        let result =
            with_jobs(jobs, || run_scenario(&spec, &algorithms, &mee, config.seed))?;
        emit_result(&out_dir, None, &result, format)?;
        write_manifest(&out_dir.join("manifest.json"), &config)?;
        print_summary(&result);
    }
    Ok(())
}

fn emit_result(
    out_dir: &std::path::Path,
    tag: Option<&str>,
    result: &RunResult,
    format: OutputFormat,
) -> Result<(), Error> {
    let suffix = tag.map(|t| format!("_{t}")).unwrap_or_default();
    match format {
        OutputFormat::Csv => {
            write_msd_curves_csv(&out_dir.join(format!("msd_curves{suffix}.csv")), result)?;
            write_summary_csv(&out_dir.join(format!("summary{suffix}.csv")), result)?;
        }
        OutputFormat::Json => {
            write_results_json(&out_dir.join(format!("results{suffix}.json")), result)?;
        }
    }
    Ok(())
}

fn print_summary(result: &RunResult) {
    println!(
        "scenario {} ({} runs completed, {} dropped)",
        result.scenario, result.completed_runs, result.dropped_runs
    );
    println!("{:<10} {:>12} {:>14} {:>12}", "algorithm", "msd_db", "mean_fpi", "seconds");
    for alg in &result.algorithms {
        println!(
            "{:<10} {:>12.2} {:>14.2} {:>12.2}",
            alg.algorithm.name(),
            alg.steady_state_total_db,
            alg.mean_fpi_count,
            alg.wallclock_sec
        );
    }
}

fn cmd_complexity(n: u64, m: u64, mf: u64, mb: u64) -> Result<(), Error> {
    if n < 1 || m < 1 || mf < 1 || mb < 1 {
        return Err(Error::Config("complexity arguments must all be >= 1".into()));
    }
    println!("flop counts per time step (order terms counted at unit coefficient)");
    println!("  MC-RTSL (n={n}, m={m}): {}", flops_mc_rtsl(n, m));
    println!(
        "  MEE-RTS (n={n}, m={m}, Mf={mf}, Mb={mb}): {}",
        flops_mee_rts(n, m, mf, mb)
    );
    println!();
    println!("backward-pass per-equation counts (n={n}):");
    println!("  {:<24} {:>12} {:>16} {:>12}", "equation", "additions", "multiplications", "divisions");
    for (name, add, mul, div) in mee_backward_equation_counts(n) {
        println!("  {name:<24} {add:>12} {mul:>16} {div:>12}");
    }
    Ok(())
}

fn cmd_list_scenarios() -> Result<(), Error> {
    for spec in scenario_catalog() {
        println!(
            "{:<16} kind={:?} T={} runs={} sigma={}",
            spec.name, spec.kind, spec.horizon, spec.mc_runs, spec.sigma
        );
    }
    Ok(())
}
