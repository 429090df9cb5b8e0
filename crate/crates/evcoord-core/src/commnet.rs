//! Simulated peer-to-peer network: an undirected connected graph of agents,
//! per-round random activity and message-failure sampling, and message
//! delivery over the links that came up.
//!
//! An edge is active in a round iff both endpoints are active and the single
//! per-edge Bernoulli delivery draw succeeds, so delivery is symmetric by
//! construction. All sampling runs on counter-mode streams of one seeded
//! ChaCha generator: round τ uses stream τ, which makes every round
//! reproducible and independent of how many draws other rounds consumed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Undirected communication graph over agents 0..n.
#[derive(Debug, Clone)]
pub struct CommGraph {
    n: usize,
    /// Canonical edge list: (a, b) with a < b, sorted, deduplicated.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommError {
    #[error("need at least two agents, got {n}")]
    TooFewAgents { n: usize },
    #[error("edge ({a},{b}) is invalid: {reason}")]
    BadEdge { a: usize, b: usize, reason: String },
    #[error("graph is not connected (agent {agent} unreachable)")]
    NotConnected { agent: usize },
    #[error("no connected graph found in {tries} tries (n={n}, edge probability {p})")]
    GenerationFailed { n: usize, p: f64, tries: usize },
    #[error("probability {value} outside {range}")]
    BadProbability { value: f64, range: &'static str },
    #[error("{what} count {got} does not match {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

impl CommGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, CommError> {
        if n < 2 {
            return Err(CommError::TooFewAgents { n });
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(CommError::BadEdge {
                    a,
                    b,
                    reason: "self-loop".into(),
                });
            }
            if a >= n || b >= n {
                return Err(CommError::BadEdge {
                    a,
                    b,
                    reason: format!("agent index out of range 0..{n}"),
                });
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &canon {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
        }
        let graph = CommGraph {
            n,
            edges: canon,
            adjacency,
        };
        if let Some(agent) = graph.unreachable_agent() {
            return Err(CommError::NotConnected { agent });
        }
        Ok(graph)
    }

    /// Erdős–Rényi G(n, p) generator, redrawn until connected. Returns the
    /// graph and the number of attempts (recorded in run metadata).
    pub fn erdos_renyi(n: usize, p: f64, seed: u64, max_tries: usize) -> Result<(Self, usize), CommError> {
        if n < 2 {
            return Err(CommError::TooFewAgents { n });
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(CommError::BadProbability {
                value: p,
                range: "[0, 1]",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for attempt in 1..=max_tries.max(1) {
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((a, b));
                    }
                }
            }
            if let Ok(graph) = CommGraph::new(n, &edges) {
                return Ok((graph, attempt));
            }
        }
        Err(CommError::GenerationFailed {
            n,
            p,
            tries: max_tries,
        })
    }

    fn unreachable_agent(&self) -> Option<usize> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().position(|&s| !s)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.adjacency[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.adjacency[agent].len()
    }
}

/// Per-agent activity and per-edge message-failure probabilities.
#[derive(Debug, Clone)]
pub struct FailureModel {
    /// Activity probability α̂ per agent, each in (0, 1].
    pub alpha_hat: Vec<f64>,
    /// Message-failure probability ᾱ per edge (canonical order), each in [0, 1].
    pub alpha_bar: Vec<f64>,
    pub seed: u64,
}

impl FailureModel {
    pub fn uniform(graph: &CommGraph, alpha_hat: f64, alpha_bar: f64, seed: u64) -> Result<Self, CommError> {
        let model = FailureModel {
            alpha_hat: vec![alpha_hat; graph.n_agents()],
            alpha_bar: vec![alpha_bar; graph.edges().len()],
            seed,
        };
        model.validate(graph)?;
        Ok(model)
    }

    pub fn validate(&self, graph: &CommGraph) -> Result<(), CommError> {
        if self.alpha_hat.len() != graph.n_agents() {
            return Err(CommError::Dimension {
                what: "activity probability",
                got: self.alpha_hat.len(),
                expected: graph.n_agents(),
            });
        }
        if self.alpha_bar.len() != graph.edges().len() {
            return Err(CommError::Dimension {
                what: "link failure probability",
                got: self.alpha_bar.len(),
                expected: graph.edges().len(),
            });
        }
        for &a in &self.alpha_hat {
            if !(a > 0.0 && a <= 1.0) {
                return Err(CommError::BadProbability {
                    value: a,
                    range: "(0, 1]",
                });
            }
        }
        for &a in &self.alpha_bar {
            if !(0.0..=1.0).contains(&a) {
                return Err(CommError::BadProbability {
                    value: a,
                    range: "[0, 1]",
                });
            }
        }
        Ok(())
    }
}

/// One round's realized activity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSample {
    pub active: Vec<bool>,
    /// Per edge in canonical order; true only if both endpoints are active
    /// and the message draw succeeded.
    pub link_active: Vec<bool>,
}

impl RoundSample {
    pub fn all_active(graph: &CommGraph) -> Self {
        RoundSample {
            active: vec![true; graph.n_agents()],
            link_active: vec![true; graph.edges().len()],
        }
    }
}

/// Samples one round: each agent is active independently with probability
/// α̂ₙ; each edge between two active agents delivers with probability 1-ᾱ
/// (one Bernoulli draw per edge, not per direction).
pub fn sample_round(graph: &CommGraph, model: &FailureModel, round: u64) -> RoundSample {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(round);
    let active: Vec<bool> = model
        .alpha_hat
        .iter()
        .map(|&p| rng.random::<f64>() < p)
        .collect();
    let link_active = graph
        .edges()
        .iter()
        .zip(&model.alpha_bar)
        .map(|(&(a, b), &bar)| {
            let delivered = rng.random::<f64>() >= bar;
            active[a] && active[b] && delivered
        })
        .collect();
    RoundSample {
        active,
        link_active,
    }
}

/// Delivers `payloads[m]` to agent n for every active link (n, m):
/// the result maps each agent to its received (sender, payload) pairs,
/// sorted by sender.
pub fn deliver<'a, P>(
    graph: &CommGraph,
    sample: &RoundSample,
    payloads: &'a [P],
) -> Vec<Vec<(usize, &'a P)>> {
    debug_assert_eq!(payloads.len(), graph.n_agents());
    let mut inbox: Vec<Vec<(usize, &'a P)>> = vec![Vec::new(); graph.n_agents()];
    for (edge_idx, &(a, b)) in graph.edges().iter().enumerate() {
        if sample.link_active[edge_idx] {
            inbox[a].push((b, &payloads[b]));
            inbox[b].push((a, &payloads[a]));
        }
    }
    for slot in inbox.iter_mut() {
        slot.sort_by_key(|(from, _)| *from);
    }
    inbox
}

/// Source of round samples; swap in a scripted sequence for tests.
pub trait RoundSampler {
    fn sample(&mut self, round: u64, graph: &CommGraph) -> RoundSample;
}

/// Random sampling from a failure model (stateless across rounds).
pub struct RandomSampler {
    pub model: FailureModel,
}

impl RoundSampler for RandomSampler {
    fn sample(&mut self, round: u64, graph: &CommGraph) -> RoundSample {
        sample_round(graph, &self.model, round)
    }
}

/// Fixed sequence of samples (1-indexed by round); rounds past the end get
/// the all-active pattern.
pub struct ScriptedSampler {
    pub rounds: Vec<RoundSample>,
}

impl RoundSampler for ScriptedSampler {
    fn sample(&mut self, round: u64, graph: &CommGraph) -> RoundSample {
        self.rounds
            .get((round - 1) as usize)
            .cloned()
            .unwrap_or_else(|| RoundSample::all_active(graph))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> CommGraph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CommGraph::new(n, &edges).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let graph = path_graph(4);
        let model = FailureModel::uniform(&graph, 1.0, 0.0, 7).unwrap();
        for round in 1..10 {
            let s = sample_round(&graph, &model, round);
            assert!(s.active.iter().all(|&a| a));
            assert!(s.link_active.iter().all(|&a| a));
        }
        let model = FailureModel::uniform(&graph, 1.0, 1.0, 7).unwrap();
        for round in 1..10 {
            let s = sample_round(&graph, &model, round);
            assert!(s.link_active.iter().all(|&a| !a));
        }
    }

    #[test]
    fn active_link_fraction_matches_product_probability() {
        // With α̂ = ᾱ = 0.5 the per-edge activation probability is
        // 0.5·0.5·0.5 = 0.125; the Monte-Carlo mean over 10^5 rounds must
        // land within ±0.005.
        let graph = path_graph(5);
        let model = FailureModel::uniform(&graph, 0.5, 0.5, 99).unwrap();
        let rounds = 100_000u64;
        let mut active_links = 0u64;
        for round in 1..=rounds {
            let s = sample_round(&graph, &model, round);
            active_links += s.link_active.iter().filter(|&&a| a).count() as u64;
        }
        let fraction = active_links as f64 / (rounds as f64 * graph.edges().len() as f64);
        assert!(
            (fraction - 0.125).abs() < 0.005,
            "fraction {fraction} too far from 0.125"
        );
    }

    #[test]
    fn delivery_count_matches_binomial_mean() {
        let graph = path_graph(6);
        let (ah, ab) = (0.8, 0.3);
        let model = FailureModel::uniform(&graph, ah, ab, 5).unwrap();
        let expect = graph.edges().len() as f64 * ah * ah * (1.0 - ab);
        let rounds = 10_000u64;
        let mut count = 0u64;
        for round in 1..=rounds {
            let s = sample_round(&graph, &model, round);
            count += s.link_active.iter().filter(|&&a| a).count() as u64;
        }
        let mean = count as f64 / rounds as f64;
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean {mean} vs expected {expect}"
        );
    }

    #[test]
    fn delivery_is_symmetric_per_edge() {
        let graph = path_graph(4);
        let model = FailureModel::uniform(&graph, 0.6, 0.4, 3).unwrap();
        let payloads: Vec<u32> = (0..4).collect();
        for round in 1..200 {
            let s = sample_round(&graph, &model, round);
            let inbox = deliver(&graph, &s, &payloads);
            for (edge_idx, &(a, b)) in graph.edges().iter().enumerate() {
                let a_got_b = inbox[a].iter().any(|&(from, _)| from == b);
                let b_got_a = inbox[b].iter().any(|&(from, _)| from == a);
                assert_eq!(a_got_b, b_got_a);
                assert_eq!(a_got_b, s.link_active[edge_idx]);
            }
        }
    }

    #[test]
    fn isolated_edge_failure_leaves_other_deliveries() {
        // Triangle plus a tail; kill only edge (1,2).
        let graph = CommGraph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        let edge_idx = graph
            .edges()
            .iter()
            .position(|&e| e == (1, 2))
            .unwrap();
        let mut sample = RoundSample::all_active(&graph);
        sample.link_active[edge_idx] = false;
        let payloads: Vec<u32> = (0..4).collect();
        let inbox = deliver(&graph, &sample, &payloads);
        assert!(!inbox[1].iter().any(|&(from, _)| from == 2));
        assert!(!inbox[2].iter().any(|&(from, _)| from == 1));
        assert!(inbox[0].iter().any(|&(from, _)| from == 1));
        assert!(inbox[0].iter().any(|&(from, _)| from == 2));
        assert!(inbox[3].iter().any(|&(from, _)| from == 2));
    }

    #[test]
    fn sampling_is_reproducible_and_seed_sensitive() {
        let graph = path_graph(5);
        let model = FailureModel::uniform(&graph, 0.5, 0.5, 42).unwrap();
        for round in 1..50 {
            assert_eq!(
                sample_round(&graph, &model, round),
                sample_round(&graph, &model, round)
            );
        }
        let other = FailureModel::uniform(&graph, 0.5, 0.5, 43).unwrap();
        let differs = (1..50).any(|round| {
            sample_round(&graph, &model, round) != sample_round(&graph, &other, round)
        });
        assert!(differs);
    }

    #[test]
    fn erdos_renyi_is_connected_and_deterministic() {
        let (g1, tries1) = CommGraph::erdos_renyi(12, 0.3, 11, 100).unwrap();
        let (g2, tries2) = CommGraph::erdos_renyi(12, 0.3, 11, 100).unwrap();
        assert_eq!(g1.edges(), g2.edges());
        assert_eq!(tries1, tries2);
        assert!(g1.unreachable_agent().is_none());
    }

    #[test]
    fn graph_validation_errors() {
        assert!(matches!(
            CommGraph::new(1, &[]),
            Err(CommError::TooFewAgents { n: 1 })
        ));
        assert!(matches!(
            CommGraph::new(3, &[(0, 0), (0, 1)]),
            Err(CommError::BadEdge { .. })
        ));
        assert!(matches!(
            CommGraph::new(4, &[(0, 1), (2, 3)]),
            Err(CommError::NotConnected { .. })
        ));
        assert!(matches!(
            CommGraph::new(3, &[(0, 5)]),
            Err(CommError::BadEdge { .. })
        ));
    }

    #[test]
    fn inactive_endpoint_disables_links() {
        let graph = path_graph(3);
        let model = FailureModel::uniform(&graph, 0.5, 0.0, 17).unwrap();
        for round in 1..500 {
            let s = sample_round(&graph, &model, round);
            for (edge_idx, &(a, b)) in graph.edges().iter().enumerate() {
                if s.link_active[edge_idx] {
                    assert!(s.active[a] && s.active[b]);
                }
                if !s.active[a] || !s.active[b] {
                    assert!(!s.link_active[edge_idx]);
                }
            }
        }
    }
}
