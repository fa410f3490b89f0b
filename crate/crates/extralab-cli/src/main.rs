//! Benchmark driver for decentralized first-order methods.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when any
//! algorithm variant diverged (or none could run); other runtime failures
//! exit 1. `EXTRALAB_THREADS` caps how many variants run in parallel.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use extralab_cli::config::{parse_config, ExperimentConfig};
use extralab_cli::suite::{build_graph, run_suite, SuiteReport};
use extralab::topology::WeightMatrix;

#[derive(Parser)]
#[command(
    name = "extralab",
    version,
    about = "Run decentralized optimization benchmarks from a JSON config"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm variant and write CSV traces.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's csv_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render SVG convergence plots.
        #[arg(long)]
        svg: bool,
        /// Replace both the problem seed and the graph seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print the configured network's size and spectral quantities.
    GraphInfo { config: PathBuf },
    /// Parse and validate a config, reporting what would run.
    Validate { config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            svg,
            seed_override,
        } => match load(&config) {
            Ok(mut cfg) => {
                if let Some(seed) = seed_override {
                    cfg.problem.seed = seed;
                    cfg.graph.seed = seed;
                }
                if svg {
                    cfg.output.svg = true;
                }
                let out_dir = out.unwrap_or_else(|| cfg.output.csv_dir.clone());
                run_command(&cfg, &out_dir)
            }
            Err(code) => code,
        },
        Command::GraphInfo { config } => match load(&config) {
            Ok(cfg) => graph_info_command(&cfg),
            Err(code) => code,
        },
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                let names: Vec<String> =
                    cfg.algorithms.iter().map(|a| a.name.to_string()).collect();
                println!(
                    "ok: {} agents, {} graph, {} variant(s): {}",
                    cfg.problem.m,
                    cfg.graph.family,
                    names.len(),
                    names.join(", ")
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run_command(cfg: &ExperimentConfig, out_dir: &PathBuf) -> ExitCode {
    let report = match run_suite(cfg, out_dir) {
        Ok(report) => report,
        Err(e @ extralab_cli::suite::SuiteError::Io { .. }) => {
            eprintln!("output error: {e}");
            return ExitCode::FAILURE;
        }
        Err(e) => {
            // graph or instance construction failed; both are determined
            // entirely by config values
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    print_report(&report);
    if report.any_divergence() || report.outcomes.is_empty() {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn print_report(report: &SuiteReport) {
    for outcome in &report.outcomes {
        let last = outcome
            .trace
            .records
            .last()
            .expect("a completed variant has at least the initial record");
        println!(
            "{}: {} records, final gap {:.6e}, consensus {:.6e}, {} grad rounds, {} comm rounds -> {}",
            outcome.name,
            outcome.trace.records.len(),
            last.objective_gap,
            last.consensus_violation,
            last.grad_rounds,
            last.comm_rounds,
            outcome.csv_path.display()
        );
    }
    for plot in &report.plots {
        println!("plot -> {}", plot.display());
    }
    for failure in &report.failures {
        eprintln!("variant failed: {}", failure.message);
    }
}

fn graph_info_command(cfg: &ExperimentConfig) -> ExitCode {
    let graph = match build_graph(&cfg.graph, cfg.problem.m) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let weights = match WeightMatrix::metropolis_lazy(&graph) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let sigma2 = weights.second_largest_eigenvalue();
    println!("m {}", graph.agents());
    println!("edges {}", graph.edges().len());
    println!("sigma2 {sigma2:.12}");
    println!("1/(1-sigma2) {:.12}", 1.0 / (1.0 - sigma2));
    ExitCode::SUCCESS
}
