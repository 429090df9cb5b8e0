//! One EV agent's consensus-ADMM state: the local dual copy λₙ, the
//! consensus dual νₙ, the primal pair uₙ = (xₙ, sₙ), and a cache of the most
//! recent λ received from each neighbor.
//!
//! Per active round the agent (1) folds freshly delivered neighbor duals
//! into its cache, falling back to the cached (stale) values for links that
//! failed, (2) accumulates the consensus dual
//! `νₙ += ρ Σₘ (λₙ - λₘ)`, (3) minimizes its subproblem against the offset
//! assembled from those quantities, and (4) refreshes its dual copy
//! `λₙ = (1/2|𝒩ₙ|)·{Σₘ(λₙ + λₘ) - νₙ/ρ + ξₙuₙ/ρ - w/(Nρ)}` before
//! broadcasting it. Inactive rounds freeze all three vectors. Nothing an
//! agent reads here belongs to another agent except cached λ values — no
//! neighbor primals, prices, or battery data cross the boundary.

use alloc::vec;
use alloc::vec::Vec;

/// Cached dual of one neighbor.
#[derive(Debug, Clone)]
struct NeighborSlot {
    id: usize,
    lambda: Vec<f64>,
    stamp: u64,
}

/// Mutable per-agent ADMM state.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Local copy of the global coupling dual, length m.
    pub lambda: Vec<f64>,
    /// Consensus dual, length m.
    pub nu: Vec<f64>,
    /// Current charge profile block of uₙ, length T.
    pub x: Vec<f64>,
    /// Current slack block of uₙ, length m.
    pub s: Vec<f64>,
    /// Round index of the last update (freeze advances it too).
    pub stamp: u64,
    /// Round whose dual refresh produced the current λ (the message stamp).
    pub lambda_stamp: u64,
    neighbors: Vec<NeighborSlot>,
}

impl AgentState {
    /// Fresh state with everything at the zero initialization; the neighbor
    /// cache is pre-seeded with zeros at stamp 0, which doubles as the known
    /// initial broadcast.
    pub fn new(neighbor_ids: &[usize], horizon: usize, m: usize) -> Self {
        let mut ids: Vec<usize> = neighbor_ids.to_vec();
        ids.sort_unstable();
        AgentState {
            lambda: vec![0.0; m],
            nu: vec![0.0; m],
            x: vec![0.0; horizon],
            s: vec![0.0; m],
            stamp: 0,
            lambda_stamp: 0,
            neighbors: ids
                .into_iter()
                .map(|id| NeighborSlot {
                    id,
                    lambda: vec![0.0; m],
                    stamp: 0,
                })
                .collect(),
        }
    }

    pub fn n_neighbors(&self) -> usize {
        self.neighbors.len()
    }

    /// Cached dual of a neighbor.
    pub fn cached_lambda(&self, neighbor: usize) -> Option<(&[f64], u64)> {
        self.neighbors
            .iter()
            .find(|slot| slot.id == neighbor)
            .map(|slot| (slot.lambda.as_slice(), slot.stamp))
    }

    /// Folds a freshly received neighbor dual into the cache. Stale or
    /// duplicate messages (stamp not newer) are ignored so cache stamps
    /// never decrease.
    pub fn receive(&mut self, from: usize, lambda: &[f64], stamp: u64) {
        if let Some(slot) = self.neighbors.iter_mut().find(|slot| slot.id == from) {
            if stamp >= slot.stamp {
                slot.lambda.copy_from_slice(lambda);
                slot.stamp = stamp;
            }
        }
    }

    /// Consensus-dual accumulation `νₙ += ρ Σₘ (λₙ - λₘ_cached)`.
    pub fn dual_step(&mut self, rho: f64) {
        for slot in &self.neighbors {
            for (nu, (own, other)) in self
                .nu
                .iter_mut()
                .zip(self.lambda.iter().zip(&slot.lambda))
            {
                *nu += rho * (own - other);
            }
        }
    }

    /// `Σₘ (λₙ + λₘ_cached)`, the neighborhood dual sum of the proximal term.
    pub fn dual_neighborhood_sum(&self) -> Vec<f64> {
        let deg = self.neighbors.len() as f64;
        let mut sum: Vec<f64> = self.lambda.iter().map(|v| v * deg).collect();
        for slot in &self.neighbors {
            for (acc, v) in sum.iter_mut().zip(&slot.lambda) {
                *acc += v;
            }
        }
        sum
    }

    /// Offset vector `o` of the subproblem penalty `γ‖ξu + o‖²`, assembled
    /// from the proximal term: `o = ρΣₘ(λₙ+λₘ) - w/N - νₙ`.
    #[cfg(not(feature = "alt-prox-scaling"))]
    pub fn assemble_offset(&self, rho: f64, w_over_n: &[f64]) -> Vec<f64> {
        let mut offset = self.dual_neighborhood_sum();
        for ((o, w), nu) in offset.iter_mut().zip(w_over_n).zip(&self.nu) {
            *o = rho * *o - w - nu;
        }
        offset
    }

    /// Alternative transcription: the headroom share enters the penalty
    /// unscaled by 1/ρ, i.e. `o = ρΣₘ(λₙ+λₘ) - ρ·w/N - νₙ`.
    #[cfg(feature = "alt-prox-scaling")]
    pub fn assemble_offset(&self, rho: f64, w_over_n: &[f64]) -> Vec<f64> {
        let mut offset = self.dual_neighborhood_sum();
        for ((o, w), nu) in offset.iter_mut().zip(w_over_n).zip(&self.nu) {
            *o = rho * (*o - w) - nu;
        }
        offset
    }

    /// Dual refresh
    /// `λₙ = (1/2|𝒩ₙ|)·{Σₘ(λₙ+λₘ) - νₙ/ρ + ξu/ρ - w/(Nρ)}`,
    /// where `xi_u = Γₙxₙ + sₙ` is evaluated at the fresh primal.
    pub fn lambda_step(&mut self, rho: f64, xi_u: &[f64], w_over_n: &[f64]) {
        let scale = 1.0 / (2.0 * self.neighbors.len() as f64);
        let sum = self.dual_neighborhood_sum();
        for (i, lam) in self.lambda.iter_mut().enumerate() {
            *lam = scale * (sum[i] + (xi_u[i] - w_over_n[i] - self.nu[i]) / rho);
        }
    }

    /// Inactive round: carry every vector over unchanged, advance the stamp.
    /// The λ vintage stays put so neighbors keep reading the old broadcast.
    pub fn freeze(&mut self, round: u64) {
        self.stamp = round;
    }

    /// Marks the state as updated in `round` (after a full active update).
    pub fn mark_updated(&mut self, round: u64) {
        self.stamp = round;
        self.lambda_stamp = round;
    }
}
