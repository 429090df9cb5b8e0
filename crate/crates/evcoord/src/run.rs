//! Orchestration: executes the distributed routine, the centralized oracle,
//! the price-based/network-aware case comparison, and failure-parameter
//! sweeps on a loaded scenario, emitting traces, profiles, violation
//! listings, and metadata.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use evcoord_core::central::{solve_centralized, CentralOptions, CentralSolution};
use evcoord_core::commnet::{FailureModel, RandomSampler};
use evcoord_core::engine::{
    AdmmOptions, DistributedSolver, RoundRecord, RunOutcome, StopReason,
};
use evcoord_core::localqp::{InnerState, LocalQp};

use crate::outputs::{
    solution_profiles, write_json, write_profiles, write_violations, TraceWriter,
};
use crate::scenario::{CaseSelector, LoadedScenario};

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Overrides {
    pub case: Option<CaseSelector>,
    pub alpha_hat: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub rho: Option<f64>,
    pub max_iter: Option<u64>,
    pub seed: Option<u64>,
}

impl LoadedScenario {
    pub fn admm_with(&self, ov: &Overrides) -> AdmmOptions {
        let mut admm = self.admm;
        if let Some(rho) = ov.rho {
            admm.rho = rho;
        }
        if let Some(max_iter) = ov.max_iter {
            admm.max_iter = max_iter;
        }
        admm
    }

    /// Failure model with uniform overrides; `--seed` reseeds the failure
    /// process (the communication graph stays as loaded).
    pub fn failure_with(&self, ov: &Overrides) -> Result<FailureModel> {
        let mut failure = self.failure.clone();
        if let Some(alpha_hat) = ov.alpha_hat {
            failure.alpha_hat = vec![alpha_hat; self.graph.n_agents()];
        }
        if let Some(alpha_bar) = ov.alpha_bar {
            failure.alpha_bar = vec![alpha_bar; self.graph.edges().len()];
        }
        if let Some(seed) = ov.seed {
            failure.seed = seed;
        }
        failure.validate(&self.graph)?;
        Ok(failure)
    }

    pub fn case_with(&self, ov: &Overrides) -> CaseSelector {
        ov.case.unwrap_or(self.file.case)
    }
}

/// Outcome summary for the process exit code and the metadata echo.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub case: CaseSelector,
    pub converged: bool,
    pub iterations: u64,
    pub objective: f64,
    pub reference_objective: Option<f64>,
    pub final_error: Option<f64>,
    pub final_primal_residual: f64,
    pub violations: usize,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    crate_version: &'a str,
    scenario: &'a crate::scenario::ScenarioFile,
    overrides: &'a Overrides,
    graph_edges: &'a [(usize, usize)],
    er_generator_attempts: Option<usize>,
    failure_seed: u64,
    alpha_hat: &'a [f64],
    alpha_bar: &'a [f64],
    rho: f64,
    max_iter: u64,
    summary: &'a RunSummary,
}

fn emit_metadata(
    path: &Path,
    scenario: &LoadedScenario,
    ov: &Overrides,
    failure: &FailureModel,
    admm: &AdmmOptions,
    summary: &RunSummary,
) -> Result<()> {
    write_json(
        path,
        &RunMetadata {
            crate_version: env!("CARGO_PKG_VERSION"),
            scenario: &scenario.file,
            overrides: ov,
            graph_edges: scenario.graph.edges(),
            er_generator_attempts: scenario.er_attempts,
            failure_seed: failure.seed,
            alpha_hat: &failure.alpha_hat,
            alpha_bar: &failure.alpha_bar,
            rho: admm.rho,
            max_iter: admm.max_iter,
            summary,
        },
    )
}

/// Centralized oracle on the network-aware problem.
pub fn solve_reference(scenario: &LoadedScenario) -> Result<CentralSolution> {
    solve_centralized(&scenario.problem, &CentralOptions::default())
        .context("centralized oracle failed")
}

/// Exact per-EV solves of the price-based case (no coupling constraint).
pub fn solve_price_based(scenario: &LoadedScenario) -> Result<Vec<Vec<f64>>> {
    let lin = scenario.problem.price_linear();
    let t = scenario.horizon();
    let mut x_fleet = Vec::with_capacity(scenario.n_agents());
    for (idx, spec) in scenario.problem.specs.iter().enumerate() {
        let mut qp = LocalQp::decoupled(
            scenario.problem.polytopes[idx].clone(),
            lin.clone(),
            spec.kappa,
            evcoord_core::localqp::LocalQpOptions {
                tol: 1e-10,
                max_iter: Some(200_000),
                ..Default::default()
            },
        );
        let mut state = InnerState::new(t, 0);
        qp.solve(&[], &mut state)
            .with_context(|| format!("price-based solve for agent {idx}"))?;
        x_fleet.push(state.x_hat);
    }
    Ok(x_fleet)
}

/// Distributed run with a per-round observer; the caller wires trace
/// emission or in-memory collection through `on_round`.
pub fn run_distributed(
    scenario: &LoadedScenario,
    admm: AdmmOptions,
    failure: FailureModel,
    reference: Option<f64>,
    on_round: impl FnMut(&RoundRecord),
) -> Result<RunOutcome> {
    let mut solver = DistributedSolver::new(
        scenario.problem.clone(),
        scenario.graph.clone(),
        admm,
        reference,
    )?;
    let mut sampler = RandomSampler { model: failure };
    Ok(solver.run(&mut sampler, on_round, None)?)
}

/// `run` subcommand: executes the selected case and writes
/// trace.csv / profiles.csv / violations.csv / metadata.json into `out`.
pub fn run_case(scenario: &LoadedScenario, ov: &Overrides, out: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let case = scenario.case_with(ov);
    let admm = scenario.admm_with(ov);
    let failure = scenario.failure_with(ov)?;

    let summary = match case {
        CaseSelector::NetworkAware => {
            let reference = solve_reference(scenario)?;
            let mut trace = TraceWriter::create(&out.join("trace.csv"))?;
            let outcome = run_distributed(
                scenario,
                admm,
                failure.clone(),
                Some(reference.objective),
                |rec| {
                    // Trace write failures surface at the end of the run.
                    let _ = trace.record(rec);
                },
            )?;
            let x_fleet = outcome.x_fleet;
            let violations = scenario
                .problem
                .coupling
                .violation_report_with_tol(&x_fleet, admm.eps_primal.max(1e-8));
            let profiles = solution_profiles(scenario, &x_fleet)?;
            write_profiles(&out.join("profiles.csv"), scenario, &x_fleet, &profiles)?;
            write_violations(&out.join("violations.csv"), scenario, &violations)?;
            RunSummary {
                case,
                converged: outcome.reason == StopReason::Converged,
                iterations: outcome.iterations,
                objective: outcome.final_record.objective,
                reference_objective: Some(reference.objective),
                final_error: outcome.final_record.error,
                final_primal_residual: outcome.final_record.primal_residual,
                violations: violations.len(),
            }
        }
        CaseSelector::PriceBased => {
            let x_fleet = solve_price_based(scenario)?;
            let objective = scenario.problem.objective(&x_fleet);
            let violations = scenario.problem.coupling.violation_report(&x_fleet);
            let profiles = solution_profiles(scenario, &x_fleet)?;
            write_profiles(&out.join("profiles.csv"), scenario, &x_fleet, &profiles)?;
            write_violations(&out.join("violations.csv"), scenario, &violations)?;
            RunSummary {
                case,
                converged: true,
                iterations: 0,
                objective,
                reference_objective: None,
                final_error: None,
                final_primal_residual: 0.0,
                violations: violations.len(),
            }
        }
    };
    emit_metadata(
        &out.join("metadata.json"),
        scenario,
        ov,
        &scenario.failure_with(ov)?,
        &admm,
        &summary,
    )?;
    Ok(summary)
}

/// `oracle` subcommand: centralized solve with profile emission.
pub fn run_oracle(scenario: &LoadedScenario, out: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let solution = solve_reference(scenario)?;
    let violations = scenario
        .problem
        .coupling
        .violation_report_with_tol(&solution.x_fleet, 1e-8);
    let profiles = solution_profiles(scenario, &solution.x_fleet)?;
    write_profiles(&out.join("profiles.csv"), scenario, &solution.x_fleet, &profiles)?;
    write_violations(&out.join("violations.csv"), scenario, &violations)?;
    let summary = RunSummary {
        case: CaseSelector::NetworkAware,
        converged: true,
        iterations: solution.iterations as u64,
        objective: solution.objective,
        reference_objective: Some(solution.objective),
        final_error: None,
        final_primal_residual: solution.residual,
        violations: violations.len(),
    };
    emit_metadata(
        &out.join("metadata.json"),
        scenario,
        &Overrides::default(),
        &scenario.failure,
        &scenario.admm,
        &summary,
    )?;
    Ok(summary)
}

/// Comparison artifact of the two cases.
#[derive(Debug, Clone, Serialize)]
pub struct CaseStudy {
    pub price_based_objective: f64,
    pub network_aware_objective: f64,
    pub network_aware_converged: bool,
    pub network_aware_iterations: u64,
    pub price_based_violations: usize,
    pub network_aware_violations: usize,
    pub price_based_undervoltage: usize,
    pub price_based_overvoltage: usize,
    pub price_based_thermal: usize,
    /// Worst departure-SoC miss over the fleet, per case.
    pub price_based_target_gap: f64,
    pub network_aware_target_gap: f64,
}

fn target_gap(scenario: &LoadedScenario, x_fleet: &[Vec<f64>]) -> f64 {
    scenario
        .problem
        .specs
        .iter()
        .zip(x_fleet)
        .map(|(spec, x)| {
            let soc = evcoord_core::fleet::soc_profile(spec, x, scenario.delta_h());
            (soc[soc.len() - 1] - spec.soc_target).abs()
        })
        .fold(0.0, f64::max)
}

/// `case-study` subcommand: runs the price-based case exactly and the
/// network-aware case via the distributed routine, then emits both sets of
/// profiles, violation listings, and a comparison summary.
pub fn run_case_study(scenario: &LoadedScenario, ov: &Overrides, out: &Path) -> Result<CaseStudy> {
    std::fs::create_dir_all(out)?;
    let admm = scenario.admm_with(ov);
    let failure = scenario.failure_with(ov)?;

    // Case 1: price-based.
    let x_price = solve_price_based(scenario)?;
    let price_viol = scenario.problem.coupling.violation_report(&x_price);
    let profiles = solution_profiles(scenario, &x_price)?;
    write_profiles(&out.join("profiles_price_based.csv"), scenario, &x_price, &profiles)?;
    write_violations(&out.join("violations_price_based.csv"), scenario, &price_viol)?;

    // Case 2: network-aware via the distributed routine.
    let reference = solve_reference(scenario)?;
    let mut trace = TraceWriter::create(&out.join("trace_network_aware.csv"))?;
    let outcome = run_distributed(
        scenario,
        admm,
        failure,
        Some(reference.objective),
        |rec| {
            let _ = trace.record(rec);
        },
    )?;
    let x_network = outcome.x_fleet;
    let network_viol = scenario
        .problem
        .coupling
        .violation_report_with_tol(&x_network, admm.eps_primal.max(1e-8));
    let profiles = solution_profiles(scenario, &x_network)?;
    write_profiles(
        &out.join("profiles_network_aware.csv"),
        scenario,
        &x_network,
        &profiles,
    )?;
    write_violations(
        &out.join("violations_network_aware.csv"),
        scenario,
        &network_viol,
    )?;

    use evcoord_core::coupling::RowKind;
    let count = |kind: RowKind| price_viol.iter().filter(|v| v.kind == kind).count();
    let study = CaseStudy {
        price_based_objective: scenario.problem.objective(&x_price),
        network_aware_objective: scenario.problem.objective(&x_network),
        network_aware_converged: outcome.reason == StopReason::Converged,
        network_aware_iterations: outcome.iterations,
        price_based_violations: price_viol.len(),
        network_aware_violations: network_viol.len(),
        price_based_undervoltage: count(RowKind::LowerVoltage),
        price_based_overvoltage: count(RowKind::UpperVoltage),
        price_based_thermal: count(RowKind::Thermal),
        price_based_target_gap: target_gap(scenario, &x_price),
        network_aware_target_gap: target_gap(scenario, &x_network),
    };
    write_json(&out.join("case_study.json"), &study)?;
    Ok(study)
}

/// `sweep` subcommand: one distributed trace per (α̂, ᾱ) combination.
pub fn run_sweep(
    scenario: &LoadedScenario,
    ov: &Overrides,
    alpha_hats: &[f64],
    alpha_bars: &[f64],
    out: &Path,
) -> Result<Vec<(f64, f64, RunSummary)>> {
    if alpha_hats.is_empty() || alpha_bars.is_empty() {
        bail!("sweep needs at least one alpha-hat and one alpha-bar value");
    }
    std::fs::create_dir_all(out)?;
    let reference = solve_reference(scenario)?;
    let admm = scenario.admm_with(ov);
    let mut results = Vec::new();
    for &alpha_hat in alpha_hats {
        for &alpha_bar in alpha_bars {
            let combo = Overrides {
                alpha_hat: Some(alpha_hat),
                alpha_bar: Some(alpha_bar),
                ..ov.clone()
            };
            let failure = scenario.failure_with(&combo)?;
            let mut trace =
                TraceWriter::create(&out.join(format!("trace_ah{alpha_hat}_ab{alpha_bar}.csv")))?;
            let outcome = run_distributed(
                scenario,
                admm,
                failure,
                Some(reference.objective),
                |rec| {
                    let _ = trace.record(rec);
                },
            )?;
            let summary = RunSummary {
                case: CaseSelector::NetworkAware,
                converged: outcome.reason == StopReason::Converged,
                iterations: outcome.iterations,
                objective: outcome.final_record.objective,
                reference_objective: Some(reference.objective),
                final_error: outcome.final_record.error,
                final_primal_residual: outcome.final_record.primal_residual,
                violations: 0,
            };
            results.push((alpha_hat, alpha_bar, summary));
        }
    }
    write_json(
        &out.join("sweep_summary.json"),
        &results
            .iter()
            .map(|(ah, ab, s)| {
                serde_json::json!({
                    "alpha_hat": ah,
                    "alpha_bar": ab,
                    "converged": s.converged,
                    "iterations": s.iterations,
                    "final_error": s.final_error,
                })
            })
            .collect::<Vec<_>>(),
    )?;
    Ok(results)
}
