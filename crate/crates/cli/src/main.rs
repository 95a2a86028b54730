use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use switchopt_cli::commands::{
    load_subproblem, print_subproblem, resolve_out_dir, run_check_gradient, run_solve,
    run_subproblem, run_sweep, sweep_csv, write_solve_artifacts, CliError,
};
use switchopt_cli::config::RunConfig;

/// Trust-region solver for ODE optimal control with continuous-or-off
/// controls, convex running costs and switching penalties.
#[derive(Parser)]
#[command(name = "switchopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Repeatable dotted-path override, e.g. `trust_region.eta=0.2`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write the run artifacts.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; overrides the config's `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the adjoint gradient against central finite differences.
    CheckGradient {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of random admissible controls to test.
        #[arg(long, default_value_t = 10)]
        controls: usize,
    },
    /// Solve the problem on several grid resolutions and tabulate the
    /// criticality trend.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated cell counts, e.g. `64,128,256,512`.
        #[arg(long, value_delimiter = ',')]
        grids: Vec<usize>,
        /// Run the levels on separate threads.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a single model subproblem from an instance file.
    Subproblem {
        /// Path to the instance (TOML).
        instance: PathBuf,
        /// Also run the exhaustive oracle and report a match verdict.
        #[arg(long)]
        brute_force: bool,
        /// Dump the value function as CSV to this path.
        #[arg(long)]
        dump_phi: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(&args.config, &args.overrides)?)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode, CliError> {
    match Cli::parse().command {
        Command::Solve { config, out } => {
            let cfg = load(&config)?;
            let dir = resolve_out_dir(&cfg, out.as_deref());
            let outcome = match run_solve(&cfg) {
                Ok(outcome) => outcome,
                // A mid-solve blowup carries the iterate; dump it so the
                // failing state can be inspected.
                Err(CliError::Solver(switchopt_core::Error::SolveAborted {
                    iter,
                    source,
                    control,
                })) => {
                    std::fs::create_dir_all(&dir)?;
                    let dump = dir.join("aborted_control.csv");
                    std::fs::write(&dump, control.to_csv())?;
                    eprintln!(
                        "error: solve aborted at iteration {iter}: {source}; \
                         iterate dumped to {}",
                        dump.display()
                    );
                    return Ok(ExitCode::from(2));
                }
                Err(other) => return Err(other),
            };
            write_solve_artifacts(&outcome, &dir)?;
            println!(
                "terminated: {:?} after {} iterations, J = {}, c_prox = {:e}, c_switch = {:e}",
                outcome.report.termination,
                outcome.report.iterations(),
                outcome.report.final_objective,
                outcome.report.final_criticality.c_prox,
                outcome.report.final_criticality.c_switch,
            );
            println!("artifacts written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckGradient { config, controls } => {
            let cfg = load(&config)?;
            let check = run_check_gradient(&cfg, controls)?;
            for (k, err) in check.per_control.iter().enumerate() {
                println!("control {:>2}: max rel error {:e}", k + 1, err);
            }
            println!("max rel error: {:e}", check.max_rel_error);
            if check.passed() {
                println!("gradient check passed (tolerance {:e})", check.tolerance);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("gradient check FAILED (tolerance {:e})", check.tolerance);
                Ok(ExitCode::from(3))
            }
        }
        Command::Sweep {
            config,
            grids,
            parallel,
            out,
        } => {
            let cfg = load(&config)?;
            let rows = run_sweep(&cfg, &grids, parallel)?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            let dir = resolve_out_dir(&cfg, out.as_deref());
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("sweep.csv"), &csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Subproblem {
            instance,
            brute_force,
            dump_phi,
        } => {
            let file = load_subproblem(&instance)?;
            let outcome = run_subproblem(&file, brute_force, dump_phi.is_some())?;
            if let (Some(path), Some(csv)) = (&dump_phi, &outcome.phi_csv) {
                std::fs::write(path, csv)?;
            }
            let ok = print_subproblem(&mut std::io::stdout(), &outcome)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}
