//! Command-line interface for the EV charge coordination simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use evcoord::run::{self, Overrides};
use evcoord::scenario::{self, CaseSelector};

#[derive(Parser)]
#[command(
    name = "evcoord",
    about = "Network-aware EV charging coordination: distributed consensus runs, \
             a centralized oracle, case comparisons, and failure sweeps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: out/<scenario name> next to the scenario).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one case of a scenario (distributed for --case network,
    /// exact per-EV solves for --case price).
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// price | network (overrides the scenario file).
        #[arg(long)]
        case: Option<String>,
        /// Uniform agent-activity probability override.
        #[arg(long)]
        alpha_hat: Option<f64>,
        /// Uniform link-failure probability override.
        #[arg(long)]
        alpha_bar: Option<f64>,
        /// Penalty parameter override.
        #[arg(long)]
        rho: Option<f64>,
        /// Iteration cap override.
        #[arg(long)]
        max_iter: Option<u64>,
        /// Failure-process seed override (the graph stays as loaded).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the coupled problem centrally and emit the reference solution.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Run both cases and emit the comparison artifact.
    CaseStudy {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One distributed trace per (alpha-hat, alpha-bar) combination.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Comma-separated activity probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        alpha_hat_list: Vec<f64>,
        /// Comma-separated link-failure probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        alpha_bar_list: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn default_out(scenario_path: &std::path::Path, name: &str) -> PathBuf {
    scenario_path
        .parent()
        .unwrap_or_else(|| std::path::Path::new("."))
        .join("out")
        .join(name)
}

fn main() -> ExitCode {
    match execute() {
        Ok(converged) => {
            if converged {
                ExitCode::from(0)
            } else {
                eprintln!("warning: iteration cap reached before convergence");
                ExitCode::from(2)
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn execute() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario: sc,
            case,
            alpha_hat,
            alpha_bar,
            rho,
            max_iter,
            seed,
        } => {
            let loaded = scenario::load(&sc.scenario).context("loading scenario")?;
            let ov = Overrides {
                case: case.as_deref().map(CaseSelector::parse).transpose()?,
                alpha_hat,
                alpha_bar,
                rho,
                max_iter,
                seed,
            };
            let out = sc
                .out
                .unwrap_or_else(|| default_out(&sc.scenario, &loaded.file.name));
            let summary = run::run_case(&loaded, &ov, &out)?;
            println!(
                "{} case: objective {:.6}{} after {} iterations; {} violation(s); results in {}",
                match summary.case {
                    CaseSelector::PriceBased => "price-based",
                    CaseSelector::NetworkAware => "network-aware",
                },
                summary.objective,
                summary
                    .final_error
                    .map(|e| format!(" (error {e:.3e})"))
                    .unwrap_or_default(),
                summary.iterations,
                summary.violations,
                out.display()
            );
            Ok(summary.converged)
        }
        Command::Oracle { scenario: sc } => {
            let loaded = scenario::load(&sc.scenario).context("loading scenario")?;
            let out = sc
                .out
                .unwrap_or_else(|| default_out(&sc.scenario, &format!("{}_oracle", loaded.file.name)));
            let summary = run::run_oracle(&loaded, &out)?;
            println!(
                "oracle objective {:.9} ({} splitting iterations, residual {:.2e}); results in {}",
                summary.objective,
                summary.iterations,
                summary.final_primal_residual,
                out.display()
            );
            Ok(true)
        }
        Command::CaseStudy { scenario: sc, seed } => {
            let loaded = scenario::load(&sc.scenario).context("loading scenario")?;
            let ov = Overrides {
                seed,
                ..Default::default()
            };
            let out = sc
                .out
                .unwrap_or_else(|| default_out(&sc.scenario, &format!("{}_case_study", loaded.file.name)));
            let study = run::run_case_study(&loaded, &ov, &out)?;
            println!(
                "price-based: objective {:.6}, {} violation(s) ({} undervoltage, {} overvoltage, {} thermal)",
                study.price_based_objective,
                study.price_based_violations,
                study.price_based_undervoltage,
                study.price_based_overvoltage,
                study.price_based_thermal,
            );
            println!(
                "network-aware: objective {:.6}, {} violation(s), {} iterations",
                study.network_aware_objective,
                study.network_aware_violations,
                study.network_aware_iterations,
            );
            println!("artifacts in {}", out.display());
            Ok(study.network_aware_converged)
        }
        Command::Sweep {
            scenario: sc,
            alpha_hat_list,
            alpha_bar_list,
            seed,
        } => {
            let loaded = scenario::load(&sc.scenario).context("loading scenario")?;
            let ov = Overrides {
                seed,
                ..Default::default()
            };
            let out = sc
                .out
                .unwrap_or_else(|| default_out(&sc.scenario, &format!("{}_sweep", loaded.file.name)));
            let results = run::run_sweep(&loaded, &ov, &alpha_hat_list, &alpha_bar_list, &out)?;
            let mut all_converged = true;
            for (ah, ab, summary) in &results {
                println!(
                    "alpha_hat={ah} alpha_bar={ab}: {} in {} iterations (final error {})",
                    if summary.converged {
                        "converged"
                    } else {
                        "iteration cap"
                    },
                    summary.iterations,
                    summary
                        .final_error
                        .map(|e| format!("{e:.3e}"))
                        .unwrap_or_default(),
                );
                all_converged &= summary.converged;
            }
            println!("traces in {}", out.display());
            Ok(all_converged)
        }
    }
}
