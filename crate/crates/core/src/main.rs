use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use strategic_select::commands::{self, CommandOpts};
use strategic_select::Error;

#[derive(Parser)]
#[command(
    name = "strategic-select",
    version,
    about = "Simulation and estimation harness for strategic agent selection under competing decision makers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; every stochastic stage derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV, SVG and manifest files.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = library default). SS_THREADS overrides.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Override the configured replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the configured rounds grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<usize>>,
    /// Override the configured selection-fraction grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    /// Override the configured knob grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Single-DM utility comparison across deployment candidates.
    Table1(RunArgs),
    /// Two-DM utility grid for the first decision maker.
    Table2(RunArgs),
    /// Estimation error against rounds (multi-DM: sync vs async arms).
    EstimationError(RunArgs),
    /// Estimation error against the selection fraction.
    RhoSweep(RunArgs),
    /// Partial vs full cooperation with three decision makers.
    Coalition(RunArgs),
    /// Robustness sweep over the nonlinearity and heterogeneity knobs.
    Sensitivity(RunArgs),
    /// Per-environment welfare reports and regulation summary.
    Welfare(RunArgs),
    /// Simulate the configured schedule and persist round logs.
    Simulate(RunArgs),
    /// Render a results CSV into an SVG chart.
    Plot {
        /// Results CSV produced by one of the commands above.
        #[arg(long)]
        input: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        output: PathBuf,
    },
}

fn build_opts(args: &RunArgs) -> Result<CommandOpts, Error> {
    let mut opts = CommandOpts::from_config_file(&args.config, args.seed, args.out.clone())?;
    opts.threads = match std::env::var("SS_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("SS_THREADS must be an integer, got '{v}'")))?,
        Err(_) => args.threads,
    };
    opts.replicates = args.replicates;
    opts.t_grid = args.t_grid.clone();
    opts.rho_grid = args.rho_grid.clone();
    opts.alpha_grid = args.alpha_grid.clone();
    Ok(opts)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Table1(args) => {
            let r = commands::cmd_table1(&build_opts(args)?)?;
            for row in &r.rows {
                println!(
                    "{}: Q = {:.4} +/- {:.4} (n = {})",
                    row.label, row.mean, row.stderr, row.n_complied
                );
            }
        }
        Command::Table2(args) => {
            let r = commands::cmd_table2(&build_opts(args)?)?;
            for cell in &r.cells {
                println!(
                    "{} x {}: Q1 = {:.4} +/- {:.4}",
                    cell.dm2, cell.dm1, cell.q1, cell.stderr
                );
            }
        }
        Command::EstimationError(args) => {
            let r = commands::cmd_estimation_error(&build_opts(args)?)?;
            for rec in &r.records {
                println!(
                    "{} [{}] dm{} T={}: error = {:.5} +/- {:.5}",
                    rec.method,
                    rec.mode,
                    rec.env + 1,
                    rec.rounds,
                    rec.error_mean,
                    rec.error_stderr
                );
            }
        }
        Command::RhoSweep(args) => {
            let r = commands::cmd_rho_sweep(&build_opts(args)?)?;
            for rec in r.records.iter().filter(|r| r.metric == "bias_norm") {
                println!(
                    "{} rho={}: bias = {:.5} +/- {:.5}",
                    rec.method, rec.rho, rec.value, rec.stderr
                );
            }
        }
        Command::Coalition(args) => {
            let r = commands::cmd_coalition(&build_opts(args)?)?;
            for bar in &r.bars {
                println!(
                    "{} dm{}: error = {:.5} +/- {:.5}",
                    bar.scenario,
                    bar.dm + 1,
                    bar.error_mean,
                    bar.error_stderr
                );
            }
        }
        Command::Sensitivity(args) => {
            let r = commands::cmd_sensitivity(&build_opts(args)?)?;
            for rec in &r.records {
                println!(
                    "{}={} {}: {:.5} +/- {:.5}",
                    rec.knob, rec.alpha, rec.metric, rec.value, rec.stderr
                );
            }
        }
        Command::Welfare(args) => {
            commands::cmd_welfare(&build_opts(args)?)?;
        }
        Command::Simulate(args) => {
            let rounds = commands::cmd_simulate(&build_opts(args)?)?;
            println!("wrote {rounds} rounds");
        }
        Command::Plot { input, output } => {
            commands::cmd_plot(input, output)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // machine-readable failure line
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "category": err.category(), "message": err.to_string() }
                })
            );
            ExitCode::from(2)
        }
    }
}
