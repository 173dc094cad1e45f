use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bonsai_core::bench::{make_benchmark, BENCHMARKS};
use bonsai_core::campaign::{cmd_oracle, cmd_regret, resolve_workers, run_campaign, ExperimentConfig, RegretConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bonsai", version, about = "Robust Bayesian optimization over function networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy and seed of an experiment configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, overriding the environment and configuration.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Brute-force robust optimum of a benchmark.
    Oracle {
        benchmark: String,
        /// Grid points per design dimension.
        #[arg(long)]
        grid: Option<usize>,
        /// Write the full table as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nominal Thompson sampling regret study.
    Regret {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the built-in benchmarks.
    ListBenchmarks,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let workers = resolve_workers(workers, cfg.workers)?;
            let summary = run_campaign(&cfg, workers)?;
            println!("{}: {} cells on {} workers in {:.1}s", summary.problem, summary.strategies.iter().map(|s| s.seeds.len()).sum::<usize>(), workers, summary.wall_seconds);
            for s in &summary.strategies {
                println!(
                    "  {:<18} final worst case {:>10.4} ± {:.4}",
                    s.strategy.to_string(),
                    s.final_mean,
                    s.final_ci_half_width
                );
            }
            if summary.failed_cells > 0 {
                anyhow::bail!("{} cells failed; see {}", summary.failed_cells, cfg.output_dir.join("summary.json").display());
            }
        }
        Command::Oracle { benchmark, grid, out } => {
            let (result, csv) = cmd_oracle(&benchmark, grid)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
                    let x: Vec<String> = result.x.iter().map(|v| format!("{v:.4}")).collect();
                    println!("{benchmark}: x* = ({}), worst case = {:.4}", x.join(", "), result.value);
                }
                None => print!("{csv}"),
            }
        }
        Command::Regret { config, out, workers } => {
            let mut cfg = RegretConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let workers = resolve_workers(workers, cfg.workers)?;
            let report = cmd_regret(&cfg, workers)?;
            if let Some(r) = &report.reduction {
                println!("single-node reduction: {r}");
            }
            for (t, v) in &report.average_regret {
                println!("T = {t:>4}: mean cumulative regret / T = {v:.5}");
            }
            println!("regret inequalities: {}", if report.inequalities_hold { "pass" } else { "fail" });
            println!("{}", report.note);
        }
        Command::ListBenchmarks => {
            for name in BENCHMARKS {
                let b = make_benchmark(name)?;
                let p = &b.problem;
                println!(
                    "{name:<32} n_x = {}  n_w = {}  |W| = {:>4}  nodes = {}",
                    p.design_dim(),
                    p.uncertainty_dim(),
                    p.set.len(),
                    p.net.node_count()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
