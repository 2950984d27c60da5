//! Command-line driver: `taxhedge <reserves|hedge|two-step|validate>`.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure
//! (non-finite value detected). `TAXHEDGE_THREADS` caps worker threads.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use taxhedge_cli::runner::RunError;
use taxhedge_cli::{Manifest, ResultTable, ScenarioConfig};

#[derive(Parser)]
#[command(name = "taxhedge", version, about = "Risk-minimizing hedging of life-insurance payments under taxes and expenses")]
struct Cli {
    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV tables and the manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override the Monte Carlo seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the Monte Carlo path count from the config.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Override the simulation grid step count from the config.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// State-wise reserve curves on a reporting grid.
    Reserves,
    /// Simulated optimal-strategy paths, risk estimate, and perturbation table.
    Hedge,
    /// Two-step consistency check of the combined payment stream.
    TwoStep,
    /// Parse and validate the configuration, reporting all errors.
    Validate,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TAXHEDGE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is built once before any parallel work");
            }
            _ => {
                eprintln!("TAXHEDGE_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(EXIT_VALIDATION);
            }
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                RunError::Validation(_) => ExitCode::from(EXIT_VALIDATION),
                RunError::Numerical(_) => ExitCode::from(EXIT_NUMERICAL),
                RunError::Internal(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, RunError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        RunError::Validation(vec![taxhedge_cli::ValidationError {
            path: "--config".into(),
            message: "a configuration file is required".into(),
        }])
    })?;
    let text = std::fs::read_to_string(path).map_err(|e| {
        RunError::Validation(vec![taxhedge_cli::ValidationError {
            path: "--config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        }])
    })?;
    let mut config = ScenarioConfig::parse(&text).map_err(RunError::Validation)?;
    if let Some(seed) = cli.seed {
        config.monte_carlo.seed = seed;
    }
    if let Some(paths) = cli.paths {
        config.monte_carlo.paths = paths;
    }
    if let Some(grid) = cli.grid {
        config.grid_steps = grid;
    }
    // overrides can invalidate a previously valid config
    let errors = config.validate();
    if !errors.is_empty() {
        return Err(RunError::Validation(errors));
    }
    Ok(config)
}

fn write_outputs(
    out_dir: &Path,
    command: &str,
    config: &ScenarioConfig,
    tables: &[(&str, &ResultTable)],
) -> Result<(), RunError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| RunError::Internal(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut manifest = Manifest::new(
        command,
        &config.to_json(),
        config.monte_carlo.seed,
        config.monte_carlo.paths,
        config.grid_steps,
        config.quad_points,
    );
    for (name, table) in tables {
        let bytes = table.to_csv_string().into_bytes();
        manifest.add_output(name, &bytes);
        std::fs::write(out_dir.join(name), &bytes)
            .map_err(|e| RunError::Internal(format!("cannot write {name}: {e}")))?;
    }
    manifest
        .write_to(out_dir)
        .map_err(|e| RunError::Internal(format!("cannot write manifest: {e}")))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Validate => {
            let config = load_config(cli)?;
            println!(
                "configuration valid: {} states, horizon {}, {} grid steps",
                config.states.len(),
                config.horizon,
                config.grid_steps
            );
            Ok(())
        }
        Command::Reserves => {
            let config = load_config(cli)?;
            let table = taxhedge_cli::run_reserves(&config)?;
            write_outputs(&cli.out, "reserves", &config, &[("reserves.csv", &table)])?;
            println!("wrote reserves.csv ({} rows) to {}", table.rows.len(), cli.out.display());
            Ok(())
        }
        Command::Hedge => {
            let config = load_config(cli)?;
            let (paths, risk, diagnostics) = taxhedge_cli::run_hedge_report(&config)?;
            write_outputs(
                &cli.out,
                "hedge",
                &config,
                &[
                    ("hedge_paths.csv", &paths),
                    ("hedge_risk.csv", &risk),
                    ("hedge_diagnostics.csv", &diagnostics),
                ],
            )?;
            println!(
                "wrote hedge_paths.csv, hedge_risk.csv, hedge_diagnostics.csv to {}",
                cli.out.display()
            );
            Ok(())
        }
        Command::TwoStep => {
            let config = load_config(cli)?;
            let table = taxhedge_cli::run_two_step(&config)?;
            write_outputs(&cli.out, "two-step", &config, &[("two_step.csv", &table)])?;
            println!("wrote two_step.csv to {}", cli.out.display());
            Ok(())
        }
    }
}
