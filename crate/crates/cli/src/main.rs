use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use invmcmc_cli::checks::{all_passed, run_suite, Suite};
use invmcmc_cli::config::OUTPUT_DIR_ENV;
use invmcmc_cli::{run, sweep, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "invmcmc", version, about = "Involutive MCMC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chains of a config and write traces plus diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Chains run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, help = format!("Output directory [default: config, then ${OUTPUT_DIR_ENV}]"))]
        output_dir: Option<PathBuf>,
    },
    /// Run short chains over the config's parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run a property-check suite.
    Check {
        #[arg(value_enum)]
        suite: Suite,
        /// Add the suite's deliberately broken fixture, which must fail.
        #[arg(long)]
        corrupt: bool,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            jobs,
            output_dir,
        } => {
            let c = ExperimentConfig::load(&config)?;
            let dir = c.output_dir(output_dir.as_deref());
            let out = run::run(&c, &dir, jobs)?;
            for path in &out.traces {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", out.diagnostics_path.display());
            let s = &out.diagnostics.summary;
            println!(
                "min ESS {:.1}, median min-ESS/s {:.2}, mean acceptance {:.3}",
                s.min_ess, s.median_min_ess_per_second, s.mean_acceptance_rate
            );
        }
        Command::Sweep {
            config,
            jobs,
            output_dir,
        } => {
            let c = ExperimentConfig::load(&config)?;
            let dir = c.output_dir(output_dir.as_deref());
            let (rows, path) = sweep::sweep_to_file(&c, &dir, jobs)?;
            for r in &rows {
                let point: Vec<String> = r.point.iter().map(|(p, v)| format!("{}={v}", p.name())).collect();
                let flag = if r.best { " *" } else { "" };
                println!(
                    "{:<40} msjd/s {:>12.4e}  acc {:.3}  {}{flag}",
                    point.join(" "),
                    r.msjd_per_second,
                    r.acceptance_rate,
                    r.status
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Check { suite, corrupt } => {
            let results = run_suite(suite, corrupt);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!(
                "{}: {}/{} checks passed",
                suite.name(),
                results.len() - failed,
                results.len()
            );
            if !all_passed(&results) {
                return Err(CliError::ChecksFailed {
                    failed,
                    total: results.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
