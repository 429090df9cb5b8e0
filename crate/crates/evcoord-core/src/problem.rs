//! The assembled coordination problem: fleet specs and polytopes, the price
//! profile, and the coupled network constraint. Both the distributed routine
//! and the centralized reference solver consume this bundle.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coupling::CouplingSystem;
use crate::fleet::{operational_cost, BatteryPolytope, EvSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("inconsistent problem data: {detail}")]
    Inconsistent { detail: String },
}

/// Coupled EV-coordination problem over one horizon.
#[derive(Clone)]
pub struct Problem {
    pub specs: Vec<EvSpec>,
    pub polytopes: Vec<BatteryPolytope>,
    /// Electricity price per step [$/kWh].
    pub price: Vec<f64>,
    /// Step length [h].
    pub delta_h: f64,
    pub coupling: Arc<CouplingSystem>,
}

impl Problem {
    pub fn new(
        specs: Vec<EvSpec>,
        polytopes: Vec<BatteryPolytope>,
        price: Vec<f64>,
        delta_h: f64,
        coupling: Arc<CouplingSystem>,
    ) -> Result<Self, ProblemError> {
        let n = specs.len();
        let t = coupling.horizon();
        if polytopes.len() != n {
            return Err(ProblemError::Inconsistent {
                detail: format!("{} polytopes for {n} EVs", polytopes.len()),
            });
        }
        if coupling.n_agents() != n {
            return Err(ProblemError::Inconsistent {
                detail: format!("coupling covers {} agents, fleet has {n}", coupling.n_agents()),
            });
        }
        if price.len() != t {
            return Err(ProblemError::Inconsistent {
                detail: format!("{} price steps for horizon {t}", price.len()),
            });
        }
        for (i, poly) in polytopes.iter().enumerate() {
            if poly.horizon() != t {
                return Err(ProblemError::Inconsistent {
                    detail: format!("polytope {i} horizon {} vs {t}", poly.horizon()),
                });
            }
        }
        if delta_h <= 0.0 {
            return Err(ProblemError::Inconsistent {
                detail: format!("step length {delta_h} h not positive"),
            });
        }
        Ok(Problem {
            specs,
            polytopes,
            price,
            delta_h,
            coupling,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.specs.len()
    }

    pub fn horizon(&self) -> usize {
        self.coupling.horizon()
    }

    /// Total fleet operational cost Σₙ Ωₙ(xₙ).
    pub fn objective(&self, x_fleet: &[Vec<f64>]) -> f64 {
        self.specs
            .iter()
            .zip(x_fleet)
            .map(|(spec, x)| operational_cost(spec, &self.price, x, self.delta_h))
            .sum()
    }

    /// Linear cost term q = Δ·η shared by every agent's subproblem.
    pub fn price_linear(&self) -> Vec<f64> {
        self.price.iter().map(|eta| self.delta_h * eta).collect()
    }
}
