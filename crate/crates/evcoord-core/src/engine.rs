//! Distributed coordination runtime: drives synchronous rounds of the
//! consensus-ADMM routine over the simulated peer-to-peer network.
//!
//! Each round the engine samples the activity pattern, delivers the previous
//! round's dual broadcasts over the links that came up, and advances every
//! agent — active agents run receive → dual step → subproblem solve → dual
//! refresh → broadcast, inactive agents freeze. Agent updates within a round
//! read only snapshots taken at the round boundary plus their own state, so
//! they are order-independent (and run on a thread pool under the `parallel`
//! feature). Sampling and metric collection stay single-threaded, which
//! keeps traces bit-reproducible for a fixed seed.
//!
//! Internally the routine works on a row-equilibrated copy of the coupling
//! system; trace metrics (coupling residual, violations) are always reported
//! against the original one.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::agent::AgentState;
use crate::commnet::{deliver, CommGraph, RoundSampler};
use crate::coupling::CouplingSystem;
use crate::linalg::norm_inf_diff;
use crate::localqp::{InnerState, LocalQp, LocalQpError, LocalQpOptions};
use crate::problem::Problem;

#[derive(Debug, Clone, Copy)]
pub struct AdmmOptions {
    /// Penalty parameter ρ.
    pub rho: f64,
    pub max_iter: u64,
    /// Stop when every agent's λ moved less than this (infinity norm)...
    pub eps_dual: f64,
    /// ...and the positive part of the coupling residual is below this.
    pub eps_primal: f64,
    /// Run the protocol on the row-equilibrated coupling system.
    pub row_scaling: bool,
    pub inner: LocalQpOptions,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 1.0,
            max_iter: 10_000,
            eps_dual: 1e-6,
            eps_primal: 1e-6,
            row_scaling: true,
            inner: LocalQpOptions::default(),
        }
    }
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord {
    pub iteration: u64,
    /// Fleet objective Σ Ωₙ(xₙ) at the current primals.
    pub objective: f64,
    /// Relative gap to the reference objective, when one was supplied.
    pub error: Option<f64>,
    /// max over agent pairs of ‖λₙ - λₘ‖∞ (protocol scaling).
    pub dual_gap: f64,
    /// ‖(ΣΓₙxₙ - w)₊‖∞ against the original coupling system.
    pub primal_residual: f64,
    /// max over agents of ‖λₙ - λₙ_prev‖∞ this round.
    pub lambda_delta: f64,
    pub n_active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub iterations: u64,
    pub x_fleet: Vec<Vec<f64>>,
    pub final_record: RoundRecord,
}

/// A message crossing one link, exposed to the optional bus tap. The payload
/// is exactly the sender's dual copy plus its vintage stamp.
#[derive(Debug, Clone, Copy)]
pub struct MessageView<'a> {
    pub round: u64,
    pub from: usize,
    pub to: usize,
    pub stamp: u64,
    pub lambda: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("graph covers {graph} agents but the problem has {fleet}")]
    AgentCount { graph: usize, fleet: usize },
    #[error("agent {agent} subproblem failed at round {round}: {source}")]
    Subproblem {
        agent: usize,
        round: u64,
        source: LocalQpError,
    },
}

/// Stopping rule: dual copies have stopped moving and the coupled constraint
/// holds to tolerance.
///
/// The engine requires this to hold on [`STABILITY_ROUNDS`] consecutive
/// rounds in which every agent refreshed its dual at least once: with a zero
/// initialization the dual copies sit still for one round while neighbor
/// information propagates its first hop, and under agent dropouts a round of
/// mostly-frozen agents trivially reports a tiny dual change. Both would
/// otherwise end runs long before consensus.
pub fn stopping_criterion(
    max_lambda_delta: f64,
    positive_coupling_residual: f64,
    eps_dual: f64,
    eps_primal: f64,
) -> bool {
    max_lambda_delta < eps_dual && positive_coupling_residual < eps_primal
}

/// Consecutive satisfied rounds required before a run stops.
pub const STABILITY_ROUNDS: u64 = 3;

struct AgentRuntime {
    state: AgentState,
    qp: LocalQp,
    warm: InnerState,
}

/// The assembled distributed solver.
pub struct DistributedSolver {
    problem: Problem,
    graph: CommGraph,
    agents: Vec<AgentRuntime>,
    /// Coupling system the protocol runs on (possibly row-equilibrated).
    protocol: Arc<CouplingSystem>,
    w_over_n: Vec<f64>,
    opts: AdmmOptions,
    reference_objective: Option<f64>,
}

impl DistributedSolver {
    pub fn new(
        problem: Problem,
        graph: CommGraph,
        opts: AdmmOptions,
        reference_objective: Option<f64>,
    ) -> Result<Self, EngineError> {
        let n = problem.n_agents();
        if graph.n_agents() != n {
            return Err(EngineError::AgentCount {
                graph: graph.n_agents(),
                fleet: n,
            });
        }
        let protocol: Arc<CouplingSystem> = if opts.row_scaling {
            Arc::new(problem.coupling.equilibrated().0)
        } else {
            Arc::clone(&problem.coupling)
        };
        let w_over_n: Vec<f64> = protocol.w().iter().map(|v| v / n as f64).collect();
        let lin = problem.price_linear();
        let t = problem.horizon();
        let m = protocol.n_rows();
        let agents = (0..n)
            .map(|idx| {
                let degree = graph.degree(idx) as f64;
                let gamma = 1.0 / (4.0 * opts.rho * degree);
                let qp = LocalQp::new(
                    problem.polytopes[idx].clone(),
                    lin.clone(),
                    problem.specs[idx].kappa,
                    gamma,
                    Arc::clone(&protocol),
                    idx,
                    opts.inner,
                );
                // The first-round offset under zero duals is -w/N; seeding
                // the slack block with its closed-form response makes the
                // cold solve start near-feasible.
                let round1_offset: Vec<f64> = w_over_n.iter().map(|v| -v).collect();
                AgentRuntime {
                    state: AgentState::new(graph.neighbors(idx), t, m),
                    qp,
                    warm: InnerState::seeded(t, m, &round1_offset),
                }
            })
            .collect();
        Ok(DistributedSolver {
            problem,
            graph,
            agents,
            protocol,
            w_over_n,
            opts,
            reference_objective,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Current charge profiles (orchestrator measurement channel).
    pub fn x_fleet(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.state.x.clone()).collect()
    }

    /// Current dual copy of one agent (protocol scaling).
    pub fn lambda(&self, agent: usize) -> &[f64] {
        &self.agents[agent].state.lambda
    }

    /// Current consensus dual of one agent (protocol scaling).
    pub fn nu(&self, agent: usize) -> &[f64] {
        &self.agents[agent].state.nu
    }

    /// Current slack block of one agent's primal (protocol scaling).
    pub fn slack_block(&self, agent: usize) -> &[f64] {
        &self.agents[agent].state.s
    }

    /// The coupling system the protocol runs on (row-equilibrated when
    /// `row_scaling` is set).
    pub fn protocol_coupling(&self) -> &Arc<CouplingSystem> {
        &self.protocol
    }

    /// Executes rounds until the stopping criterion or the iteration cap.
    /// `on_round` observes every completed round (trace emission); `tap`,
    /// when present, observes every delivered message.
    pub fn run(
        &mut self,
        sampler: &mut dyn RoundSampler,
        mut on_round: impl FnMut(&RoundRecord),
        mut tap: Option<&mut dyn FnMut(MessageView<'_>)>,
    ) -> Result<RunOutcome, EngineError> {
        let rho = self.opts.rho;
        let mut last_record = self.round_record(0, f64::INFINITY, self.graph.n_agents());
        let mut satisfied_streak: u64 = 0;
        for round in 1..=self.opts.max_iter {
            let sample = sampler.sample(round, &self.graph);

            // Snapshot of the previous round's broadcasts.
            let payloads: Vec<(Vec<f64>, u64)> = self
                .agents
                .iter()
                .map(|a| (a.state.lambda.clone(), a.state.lambda_stamp))
                .collect();
            let inboxes = deliver(&self.graph, &sample, &payloads);

            if let Some(tap) = tap.as_deref_mut() {
                for (to, inbox) in inboxes.iter().enumerate() {
                    for (from, payload) in inbox {
                        tap(MessageView {
                            round,
                            from: *from,
                            to,
                            stamp: payload.1,
                            lambda: &payload.0,
                        });
                    }
                }
            }

            let protocol = &self.protocol;
            let w_over_n = &self.w_over_n;
            let update_one = |idx: usize, rt: &mut AgentRuntime| -> Result<f64, EngineError> {
                if !sample.active[idx] {
                    rt.state.freeze(round);
                    return Ok(0.0);
                }
                for (from, payload) in &inboxes[idx] {
                    rt.state.receive(*from, &payload.0, payload.1);
                }
                rt.state.dual_step(rho);
                let offset = rt.state.assemble_offset(rho, w_over_n);
                rt.qp
                    .solve(&offset, &mut rt.warm)
                    .map_err(|source| EngineError::Subproblem {
                        agent: idx,
                        round,
                        source,
                    })?;
                rt.state.x.copy_from_slice(&rt.warm.x_hat);
                rt.state.s.copy_from_slice(&rt.warm.s_hat);
                let mut xi_u = protocol.gamma_apply(idx, &rt.state.x);
                for (v, s) in xi_u.iter_mut().zip(&rt.state.s) {
                    *v += s;
                }
                let prev_lambda = rt.state.lambda.clone();
                rt.state.lambda_step(rho, &xi_u, w_over_n);
                rt.state.mark_updated(round);
                Ok(norm_inf_diff(&rt.state.lambda, &prev_lambda))
            };

            #[cfg(feature = "parallel")]
            let deltas: Vec<Result<f64, EngineError>> = {
                use rayon::prelude::*;
                self.agents
                    .par_iter_mut()
                    .enumerate()
                    .map(|(idx, rt)| update_one(idx, rt))
                    .collect()
            };
            #[cfg(not(feature = "parallel"))]
            let deltas: Vec<Result<f64, EngineError>> = self
                .agents
                .iter_mut()
                .enumerate()
                .map(|(idx, rt)| update_one(idx, rt))
                .collect();

            let mut lambda_delta: f64 = 0.0;
            for d in deltas {
                lambda_delta = lambda_delta.max(d?);
            }

            let n_active = sample.active.iter().filter(|&&a| a).count();
            let record = self.round_record(round, lambda_delta, n_active);
            on_round(&record);
            last_record = record;

            if stopping_criterion(
                lambda_delta,
                record.primal_residual,
                self.opts.eps_dual,
                self.opts.eps_primal,
            ) {
                satisfied_streak += 1;
            } else {
                satisfied_streak = 0;
            }
            let window_start = round.saturating_sub(STABILITY_ROUNDS - 1);
            let all_refreshed = self
                .agents
                .iter()
                .all(|a| a.state.lambda_stamp >= window_start);
            if round >= 2 && satisfied_streak >= STABILITY_ROUNDS && all_refreshed {
                return Ok(RunOutcome {
                    reason: StopReason::Converged,
                    iterations: round,
                    x_fleet: self.x_fleet(),
                    final_record: last_record,
                });
            }
        }
        Ok(RunOutcome {
            reason: StopReason::MaxIterations,
            iterations: self.opts.max_iter,
            x_fleet: self.x_fleet(),
            final_record: last_record,
        })
    }

    /// Max over all agent pairs of ‖λₙ - λₘ‖∞.
    pub fn dual_disagreement(&self) -> f64 {
        let n = self.agents.len();
        let mut gap: f64 = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                gap = gap.max(norm_inf_diff(
                    &self.agents[a].state.lambda,
                    &self.agents[b].state.lambda,
                ));
            }
        }
        gap
    }

    fn round_record(&self, iteration: u64, lambda_delta: f64, n_active: usize) -> RoundRecord {
        let x_fleet = self.x_fleet();
        let objective = self.problem.objective(&x_fleet);
        // Residual against the original (unscaled) coupling system.
        let primal_residual = self
            .problem
            .coupling
            .slack(&x_fleet)
            .iter()
            .fold(0.0_f64, |acc, &s| acc.max(-s))
            .max(0.0);
        let error = self.reference_objective.map(|reference| {
            debug_assert!(reference != 0.0);
            (objective - reference) / reference
        });
        RoundRecord {
            iteration,
            objective,
            error,
            dual_gap: self.dual_disagreement(),
            primal_residual,
            lambda_delta,
            n_active,
        }
    }
}
