//! Solver for one agent's strictly convex subproblem
//!
//! ```text
//!   minimize   κ‖x‖² + qᵀx + γ‖Γx + s + o‖²
//!   subject to x ∈ Ψ (battery polytope),  s ≥ 0
//! ```
//!
//! with `q = Δ·η` the linear price term and `o` the offset vector the
//! consensus routine assembles each round. The problem is solved by an
//! operator-splitting scheme: the smooth block `(x, s)` has a closed-form
//! minimizer behind one cached T×T Cholesky factor (the slack block
//! eliminates analytically), and the feasible set splits into pieces whose
//! projections are exact — the rate box with the demand equality (a capped
//! simplex, solved by breakpoint search), the cumulative-charge corridor in
//! cumulative coordinates, and the nonnegative orthant for `s`. Splitting
//! duals tie the pieces together; warm starts carry the full splitting state
//! between consecutive solves.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::coupling::CouplingSystem;
use crate::fleet::BatteryPolytope;
use crate::linalg::{norm_inf_diff, Cholesky, Mat};

#[derive(Debug, Clone, Copy)]
pub struct LocalQpOptions {
    /// Stationarity/feasibility tolerance on the splitting residuals.
    pub tol: f64,
    /// Iteration cap; `None` uses 50·(2T + 2ϰT).
    pub max_iter: Option<usize>,
    /// Initial splitting penalty; `None` picks the geometric mean of the
    /// objective and coupling curvatures, which lands near the empirically
    /// fastest value for this problem family.
    pub omega: Option<f64>,
    /// Over-relaxation factor, 1.0 disables.
    pub over_relax: f64,
    /// Residual-rebalancing cadence in iterations; 0 disables adaptation.
    /// Kept as a long-cadence safety net: rebalancing every few iterations
    /// walks the penalty away from the fast region on wide horizons.
    pub adapt_every: usize,
}

impl Default for LocalQpOptions {
    fn default() -> Self {
        LocalQpOptions {
            tol: 1e-8,
            max_iter: None,
            omega: None,
            over_relax: 1.0,
            adapt_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LocalQpError {
    #[error("iteration cap {iterations} exceeded with residual {residual:.3e} (tol {tol:.3e})")]
    IterationCap {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("offset length {got} does not match coupling rows {expected}")]
    OffsetLength { got: usize, expected: usize },
}

/// Splitting state; reusable as a warm start across solves.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    u_x: Vec<f64>,
    u_y: Vec<f64>,
    u_s: Vec<f64>,
}

impl InnerState {
    pub fn new(t: usize, m: usize) -> Self {
        InnerState {
            x: vec![0.0; t],
            s: vec![0.0; m],
            x_hat: vec![0.0; t],
            y_hat: vec![0.0; t],
            s_hat: vec![0.0; m],
            u_x: vec![0.0; t],
            u_y: vec![0.0; t],
            u_s: vec![0.0; m],
        }
    }

    /// Pre-seeds the slack blocks with the closed-form optimum for x = 0,
    /// `s = (-offset)₊`, which is exact on rows the coupling leaves slack;
    /// cuts the cold-start iteration count substantially.
    pub fn seeded(t: usize, m: usize, offset: &[f64]) -> Self {
        let mut state = InnerState::new(t, m);
        for i in 0..m {
            let s = (-offset[i]).max(0.0);
            state.s[i] = s;
            state.s_hat[i] = s;
        }
        state
    }

    /// Rescales the (scaled-form) splitting duals when the penalty changes:
    /// the unscaled multipliers y = ω·u must stay put.
    fn rescale_duals(&mut self, factor: f64) {
        for v in self
            .u_x
            .iter_mut()
            .chain(self.u_y.iter_mut())
            .chain(self.u_s.iter_mut())
        {
            *v *= factor;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

/// The static data of one agent's subproblem. The quadratic structure is
/// factored per penalty value and cached; the penalty itself adapts by
/// residual balancing and persists across warm-started solves.
pub struct LocalQp {
    t: usize,
    m: usize,
    kappa: f64,
    lin: Vec<f64>,
    gamma: f64,
    theta: f64,
    omega: f64,
    /// Corridor-block penalty ω_y = ω/λmax(TᵀT), balancing the cumulative
    /// map's operator norm against the identity blocks.
    wy: f64,
    /// Cached ΓᵀΓ (empty for the decoupled variant).
    gram: Option<Mat>,
    coupling: Option<(Arc<CouplingSystem>, usize)>,
    poly: BatteryPolytope,
    chol: Cholesky,
    opts: LocalQpOptions,
}

impl LocalQp {
    /// Subproblem with the coupling penalty `γ‖Γx + s + o‖²` of `agent`.
    pub fn new(
        poly: BatteryPolytope,
        lin: Vec<f64>,
        kappa: f64,
        gamma: f64,
        coupling: Arc<CouplingSystem>,
        agent: usize,
        opts: LocalQpOptions,
    ) -> Self {
        let t = poly.horizon();
        let m = coupling.n_rows();
        let gram = coupling.gamma_gram(agent);
        let omega0 = opts.omega.unwrap_or_else(|| {
            // Geometric mean of the x-block curvature 2κ and the coupling
            // curvature 2γ·λmax(ΓᵀΓ), with λmax bounded by the max row sum.
            let lam = (0..gram.rows())
                .map(|i| gram.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0_f64, f64::max);
            let coupling_curv = (2.0 * gamma * lam).max(1e-4);
            let obj_curv = (2.0 * kappa).max(1e-4);
            libm::sqrt(obj_curv * coupling_curv).clamp(1e-4, 10.0)
        });
        let mut qp = LocalQp {
            t,
            m,
            kappa,
            lin,
            gamma,
            theta: 0.0,
            omega: omega0,
            wy: 0.0,
            gram: Some(gram),
            coupling: Some((coupling, agent)),
            poly,
            chol: Cholesky::new(&Mat::identity(1)).unwrap(),
            opts,
        };
        qp.refactor(omega0);
        qp
    }

    /// Profile-only subproblem `min κ‖x‖² + qᵀx over Ψ` (no network term).
    pub fn decoupled(
        poly: BatteryPolytope,
        lin: Vec<f64>,
        kappa: f64,
        opts: LocalQpOptions,
    ) -> Self {
        let t = poly.horizon();
        let omega0 = opts.omega.unwrap_or_else(|| (2.0 * kappa).max(0.01));
        let mut qp = LocalQp {
            t,
            m: 0,
            kappa,
            lin,
            gamma: 0.0,
            theta: 0.0,
            omega: omega0,
            wy: 0.0,
            gram: None,
            coupling: None,
            poly,
            chol: Cholesky::new(&Mat::identity(1)).unwrap(),
            opts,
        };
        qp.refactor(omega0);
        qp
    }

    /// Rebuilds the smooth-block system for a new penalty value:
    /// `M = (2κ+ω)I + θ(ω)·ΓᵀΓ + ω·TᵀT` with `θ = 2γω/(2γ+ω)`.
    fn refactor(&mut self, omega: f64) {
        self.omega = omega;
        self.wy = omega / cumulative_gram_norm(self.t);
        self.theta = if self.gamma > 0.0 {
            2.0 * self.gamma * omega / (2.0 * self.gamma + omega)
        } else {
            0.0
        };
        let mut sys = match &self.gram {
            Some(gram) => {
                let mut g = gram.clone();
                g.scale(self.theta);
                g
            }
            None => Mat::zeros(self.t, self.t),
        };
        add_cumulative_gram(&mut sys, self.wy);
        sys.add_diag(2.0 * self.kappa + omega);
        self.chol = Cholesky::new(&sys).expect("splitting system is positive definite");
    }

    pub fn horizon(&self) -> usize {
        self.t
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    pub fn polytope(&self) -> &BatteryPolytope {
        &self.poly
    }

    /// Objective value at `(x, s)` for a given offset.
    pub fn objective(&self, offset: &[f64], x: &[f64], s: &[f64]) -> f64 {
        let mut val = 0.0;
        for (xt, q) in x.iter().zip(&self.lin) {
            val += self.kappa * xt * xt + q * xt;
        }
        if let Some((coupling, agent)) = &self.coupling {
            let gx = coupling.gamma_apply(*agent, x);
            for ((g, si), oi) in gx.iter().zip(s).zip(offset) {
                let r = g + si + oi;
                val += self.gamma * r * r;
            }
        }
        val
    }

    fn iteration_cap(&self) -> usize {
        self.opts
            .max_iter
            .unwrap_or(50 * (2 * self.t + self.m))
            .max(1)
    }

    /// Minimizes the subproblem for the given offset, warm-starting from and
    /// updating `state`. The feasible-side solution lands in
    /// `state.x_hat` / `state.s_hat`. On an exceeded iteration cap the error
    /// carries the residual while the best iterate stays in `state`.
    ///
    /// The splitting penalty self-tunes by residual balancing on a geometric
    /// schedule (rescaling the splitting duals accordingly), and the tuned
    /// value persists for the next warm-started call.
    pub fn solve(
        &mut self,
        offset: &[f64],
        state: &mut InnerState,
    ) -> Result<SolveReport, LocalQpError> {
        if offset.len() != self.m {
            return Err(LocalQpError::OffsetLength {
                got: offset.len(),
                expected: self.m,
            });
        }
        let tol = self.opts.tol;
        let cap = self.iteration_cap();
        let alpha = self.opts.over_relax;
        let t = self.t;
        let m = self.m;

        let mut rhs = vec![0.0; t];
        let mut ob = vec![0.0; m];
        let mut target_x = vec![0.0; t];
        let mut prev_x_hat = vec![0.0; t];
        let mut prev_y_hat = vec![0.0; t];
        let mut prev_s_hat = vec![0.0; m];
        let mut residual = f64::INFINITY;

        for iter in 1..=cap {
            let omega = self.omega;
            // Smooth block: M x = rhs with the slack block eliminated.
            for i in 0..t {
                rhs[i] = -self.lin[i] + omega * (state.x_hat[i] - state.u_x[i]);
            }
            {
                // + ω_y Tᵀ(ŷ - u_y): suffix sums.
                let mut suffix = 0.0;
                for i in (0..t).rev() {
                    suffix += state.y_hat[i] - state.u_y[i];
                    rhs[i] += self.wy * suffix;
                }
            }
            if let Some((coupling, agent)) = &self.coupling {
                for i in 0..m {
                    ob[i] = offset[i] + state.s_hat[i] - state.u_s[i];
                }
                let gt = coupling.gamma_apply_t(*agent, &ob);
                for i in 0..t {
                    rhs[i] -= self.theta * gt[i];
                }
            }
            self.chol.solve_in_place(&mut rhs);
            state.x.copy_from_slice(&rhs);

            // Slack block from its stationarity condition given x.
            if let Some((coupling, agent)) = &self.coupling {
                let gx = coupling.gamma_apply(*agent, &state.x);
                for i in 0..m {
                    let b = state.s_hat[i] - state.u_s[i];
                    state.s[i] = (omega * b - 2.0 * self.gamma * (gx[i] + offset[i]))
                        / (2.0 * self.gamma + omega);
                }
            }

            let mut r_primal: f64 = 0.0;

            // Box + demand copy (over-relaxed towards the previous copy).
            prev_x_hat.copy_from_slice(&state.x_hat);
            for i in 0..t {
                let relaxed = alpha * state.x[i] + (1.0 - alpha) * prev_x_hat[i];
                target_x[i] = relaxed + state.u_x[i];
            }
            state.x_hat.copy_from_slice(&target_x);
            project_polytope_box(&self.poly, &mut state.x_hat);
            for i in 0..t {
                state.u_x[i] = target_x[i] - state.x_hat[i];
                r_primal = r_primal.max((state.x[i] - state.x_hat[i]).abs());
            }

            // Corridor copy in cumulative coordinates.
            prev_y_hat.copy_from_slice(&state.y_hat);
            let mut cum = 0.0;
            for i in 0..t {
                cum += state.x[i];
                let relaxed = alpha * cum + (1.0 - alpha) * prev_y_hat[i];
                let target = relaxed + state.u_y[i];
                state.y_hat[i] = target.clamp(self.poly.cum_min, self.poly.cum_max);
                state.u_y[i] = target - state.y_hat[i];
                r_primal = r_primal.max((cum - state.y_hat[i]).abs());
            }

            // Orthant copy for the slack.
            prev_s_hat.copy_from_slice(&state.s_hat);
            for i in 0..m {
                let relaxed = alpha * state.s[i] + (1.0 - alpha) * prev_s_hat[i];
                let target = relaxed + state.u_s[i];
                state.s_hat[i] = target.max(0.0);
                state.u_s[i] = target - state.s_hat[i];
                r_primal = r_primal.max((state.s[i] - state.s_hat[i]).abs());
            }

            // Dual residual ω‖Aᵀ(ẑ - ẑ_prev)‖∞ with A = [I; T; I_s].
            let mut r_dual: f64 = 0.0;
            {
                let mut suffix = 0.0;
                for i in (0..t).rev() {
                    suffix += state.y_hat[i] - prev_y_hat[i];
                    r_dual = r_dual
                        .max((omega * (state.x_hat[i] - prev_x_hat[i]) + self.wy * suffix).abs());
                }
            }
            r_dual = r_dual.max(omega * norm_inf_diff(&state.s_hat, &prev_s_hat));

            residual = r_primal.max(r_dual);
            if residual <= tol {
                return Ok(SolveReport {
                    iterations: iter,
                    residual,
                });
            }

            // Fixed-cadence penalty rebalancing; refactoring the T×T system
            // is cheap at this size.
            if self.opts.adapt_every > 0 && iter % self.opts.adapt_every == 0 {
                if let Some(scale) = penalty_rebalance(omega, r_primal, r_dual) {
                    state.rescale_duals(1.0 / scale);
                    self.refactor(omega * scale);
                }
            }
        }
        Err(LocalQpError::IterationCap {
            iterations: cap,
            residual,
            tol,
        })
    }
}

/// Residual balancing: a factor-2 penalty step towards equal primal and dual
/// residuals, `None` when they are already within 10× of each other or the
/// penalty would leave its guard range.
pub(crate) fn penalty_rebalance(omega: f64, r_primal: f64, r_dual: f64) -> Option<f64> {
    if r_primal > 10.0 * r_dual && omega < 1e6 {
        Some(2.0)
    } else if r_dual > 10.0 * r_primal && omega > 1e-6 {
        Some(0.5)
    } else {
        None
    }
}

/// λmax(TᵀT) for the lower-triangular all-ones T: 1/(4 sin²(π/(4T+2))).
pub(crate) fn cumulative_gram_norm(t: usize) -> f64 {
    let s = libm::sin(core::f64::consts::PI / (4.0 * t as f64 + 2.0));
    1.0 / (4.0 * s * s)
}

/// Adds ω·TᵀT where T is the lower-triangular all-ones matrix:
/// [TᵀT]_{ij} = horizon - max(i, j).
fn add_cumulative_gram(sys: &mut Mat, omega: f64) {
    let t = sys.rows();
    for i in 0..t {
        for j in 0..t {
            sys[(i, j)] += omega * (t - i.max(j)) as f64;
        }
    }
}

/// Projects onto {x: x zero outside the window, x̲ ≤ x ≤ x̄, Σx = total}:
/// a box-constrained simplex solved exactly by breakpoint search on the
/// shift parameter.
pub(crate) fn project_polytope_box(poly: &BatteryPolytope, x: &mut [f64]) {
    let (lo, hi) = (poly.rate_min, poly.rate_max);
    let window = poly.window();
    for (i, v) in x.iter_mut().enumerate() {
        if !poly.availability()[i] {
            *v = 0.0;
        }
    }
    if window.is_empty() {
        return;
    }
    let w = window.len();
    let target = poly.total;

    // g(μ) = Σ clamp(v_i - μ, lo, hi) is nonincreasing piecewise linear;
    // find μ with g(μ) = target.
    let mut breakpoints = Vec::with_capacity(2 * w);
    for &i in window {
        breakpoints.push(x[i] - hi);
        breakpoints.push(x[i] - lo);
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let g = |mu: f64| -> f64 {
        window
            .iter()
            .map(|&i| (x[i] - mu).clamp(lo, hi))
            .sum::<f64>()
    };
    let mu = if target >= w as f64 * hi {
        breakpoints[0]
    } else if target <= w as f64 * lo {
        breakpoints[2 * w - 1]
    } else {
        let (mut a, mut b) = (0usize, 2 * w - 1);
        while b - a > 1 {
            let mid = (a + b) / 2;
            if g(breakpoints[mid]) >= target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let (ga, gb) = (g(breakpoints[a]), g(breakpoints[b]));
        if (ga - gb).abs() < 1e-300 {
            breakpoints[a]
        } else {
            breakpoints[a] + (ga - target) / (ga - gb) * (breakpoints[b] - breakpoints[a])
        }
    };
    for &i in window {
        x[i] = (x[i] - mu).clamp(lo, hi);
    }
    // One exact redistribution pass over strictly interior coordinates to
    // absorb the interpolation rounding.
    let sum: f64 = window.iter().map(|&i| x[i]).sum();
    let miss = target - sum;
    if miss != 0.0 {
        let free: Vec<usize> = window
            .iter()
            .copied()
            .filter(|&i| x[i] > lo && x[i] < hi)
            .collect();
        if !free.is_empty() {
            let share = miss / free.len() as f64;
            for i in free {
                x[i] = (x[i] + share).clamp(lo, hi);
            }
        }
    }
}

/// Closed-form optimal slack for a fixed x: componentwise nonnegative
/// clipping of the unconstrained minimizer of the coupling penalty.
pub fn optimal_slack(
    coupling: &CouplingSystem,
    agent: usize,
    x: &[f64],
    offset: &[f64],
) -> Vec<f64> {
    coupling
        .gamma_apply(agent, x)
        .iter()
        .zip(offset)
        .map(|(g, o)| (-(g + o)).max(0.0))
        .collect()
}

/// Infinity-norm distance of `(x, s)` from the subproblem's feasible set
/// (box, corridor, demand total, availability, orthant), for diagnostics.
pub fn feasibility_residual(poly: &BatteryPolytope, x: &[f64], s: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    let mut cum = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if !poly.availability()[i] {
            r = r.max(xi.abs());
        }
        r = r.max(poly.rate_min - xi).max(xi - poly.rate_max);
        cum += xi;
        r = r.max(poly.cum_min - cum).max(cum - poly.cum_max);
    }
    r = r.max((cum - poly.total).abs());
    for &si in s {
        r = r.max(-si);
    }
    r.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::assemble;
    use crate::feeder::{
        build_sensitivity, Bases, BaselineSeries, FeederModel, LineSegment, Phase, PhaseSet,
    };
    use crate::fleet::{build_polytope, EvSpec};
    use crate::thermal::{linearize, thermal_headroom, DisturbanceSeries, ThermalParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev_spec(departure: usize) -> EvSpec {
        EvSpec {
            arrival: 0,
            departure,
            capacity_kwh: 10.0,
            soc_init: 0.5,
            soc_target: 0.5,
            soc_min: 0.1,
            soc_max: 0.9,
            efficiency: 1.0,
            rate_min_kw: -3.0,
            rate_max_kw: 3.0,
            kappa: 0.05,
            supply_point: (1, Phase::A),
        }
    }

    fn tiny_coupling(t: usize, n_evs: usize) -> Arc<CouplingSystem> {
        let bases = Bases {
            s_base_kva: 100.0,
            v_base_v: 230.0,
        };
        let line = LineSegment::new(
            0,
            1,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.05, 0.03)],
        )
        .unwrap();
        let customers = vec![(1, Phase::A); n_evs];
        let feeder = FeederModel::new(&[0, 1], vec![line], &customers, 1.0, bases).unwrap();
        let sens = build_sensitivity(&feeder).unwrap();
        let baseline = BaselineSeries::new(&sens, vec![vec![5.0]; t], vec![vec![1.0]; t]).unwrap();
        let params = ThermalParams {
            heat_capacity: 1.8e5,
            heat_resistance: 0.02,
            coil_resistance: 1.0,
            delta_h: 0.5,
            theta_star: 500.0,
            theta_ambient_star: 300.0,
        };
        let resp = linearize(&params, t).unwrap();
        let dist = DisturbanceSeries::new(vec![300.0; t], vec![10.0; t]).unwrap();
        let head = thermal_headroom(&resp, &dist, 350.0, 420.0, 0.23).unwrap();
        let limits = crate::coupling::VoltageLimits::from_band_percent(4.6, 1.0, 1).unwrap();
        Arc::new(assemble(&sens, &baseline, &resp, &head, &limits).unwrap())
    }

    #[test]
    fn interior_optimum_is_returned_unclipped() {
        let t = 4;
        let coupling = tiny_coupling(t, 1);
        let spec = ev_spec(t);
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        // Strictly interior target (sums to the demand 0).
        let x_star = [0.4, -0.3, 0.25, -0.35];
        let m = coupling.n_rows();
        let s_star = vec![0.7; m];
        // q and o chosen so (x*, s*) is the unconstrained stationary point:
        // q = -2κx*, o = -(Γx* + s*).
        let kappa = spec.kappa;
        let lin: Vec<f64> = x_star.iter().map(|v| -2.0 * kappa * v).collect();
        let gx = coupling.gamma_apply(0, &x_star);
        let offset: Vec<f64> = gx.iter().zip(&s_star).map(|(g, s)| -(g + s)).collect();
        let mut qp = LocalQp::new(
            poly,
            lin,
            kappa,
            0.25,
            coupling,
            0,
            LocalQpOptions::default(),
        );
        let mut state = InnerState::new(t, m);
        qp.solve(&offset, &mut state).unwrap();
        for (a, b) in state.x_hat.iter().zip(&x_star) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (a, b) in state.s_hat.iter().zip(&s_star) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pinned_origin_when_window_empty() {
        let t = 3;
        let coupling = tiny_coupling(t, 1);
        let mut spec = ev_spec(0);
        spec.departure = 0;
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let m = coupling.n_rows();
        let offset: Vec<f64> = (0..m).map(|i| ((i as f64).sin()) * 0.5).collect();
        let mut qp = LocalQp::new(
            poly,
            vec![0.1; t],
            spec.kappa,
            0.3,
            Arc::clone(&coupling),
            0,
            LocalQpOptions::default(),
        );
        let mut state = InnerState::new(t, m);
        qp.solve(&offset, &mut state).unwrap();
        for &v in &state.x_hat {
            assert_eq!(v, 0.0);
        }
        let expected = optimal_slack(&coupling, 0, &state.x_hat, &offset);
        for (a, b) in state.s_hat.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_grid_search_on_two_steps() {
        let t = 2;
        let coupling = tiny_coupling(t, 1);
        let mut spec = ev_spec(t);
        spec.soc_target = 0.58; // demand total 1.6 kW·steps
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let total = poly.total;
        let m = coupling.n_rows();
        let gamma = 0.8;
        let lin = vec![0.5 * 0.3, 0.5 * 0.1];
        let offset: Vec<f64> = (0..m).map(|i| -0.2 + 0.05 * i as f64).collect();
        let mut qp = LocalQp::new(
            poly.clone(),
            lin.clone(),
            spec.kappa,
            gamma,
            Arc::clone(&coupling),
            0,
            LocalQpOptions::default(),
        );
        let mut state = InnerState::new(t, m);
        qp.solve(&offset, &mut state).unwrap();

        // Grid-search oracle: the demand equality leaves one free coordinate;
        // scan it at 1e-3 resolution with the slack set to the closed-form
        // optimum for each candidate.
        let lo = (total - poly.rate_max).max(poly.rate_min);
        let hi = (total - poly.rate_min).min(poly.rate_max);
        let mut best = (f64::INFINITY, f64::NAN);
        let steps = ((hi - lo) / 1e-3) as usize;
        for k in 0..=steps {
            let x0 = lo + k as f64 * 1e-3;
            let x = [x0, total - x0];
            if !poly.contains(&x, 1e-9) {
                continue;
            }
            let s = optimal_slack(&coupling, 0, &x, &offset);
            let val = qp.objective(&offset, &x, &s);
            if val < best.0 {
                best = (val, x0);
            }
        }
        assert!((state.x_hat[0] - best.1).abs() < 2e-3, "{} vs {}", state.x_hat[0], best.1);
        assert!((state.x_hat[1] - (total - best.1)).abs() < 2e-3);
    }

    #[test]
    fn solution_beats_random_feasible_points() {
        let t = 6;
        let coupling = tiny_coupling(t, 1);
        let mut spec = ev_spec(t);
        spec.soc_target = 0.62;
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let m = coupling.n_rows();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let offset: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut qp = LocalQp::new(
            poly.clone(),
            vec![0.12; t],
            spec.kappa,
            0.4,
            Arc::clone(&coupling),
            0,
            LocalQpOptions::default(),
        );
        let mut state = InnerState::new(t, m);
        qp.solve(&offset, &mut state).unwrap();
        let val = qp.objective(&offset, &state.x_hat, &state.s_hat);
        for _ in 0..100 {
            let x = poly.sample_feasible(&mut rng);
            let s = optimal_slack(&coupling, 0, &x, &offset);
            let other = qp.objective(&offset, &x, &s);
            assert!(val <= other + 1e-7, "{val} vs {other}");
        }
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let t = 5;
        let coupling = tiny_coupling(t, 1);
        let spec = ev_spec(t);
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let m = coupling.n_rows();
        let mut qp = LocalQp::new(
            poly,
            vec![0.06; t],
            spec.kappa,
            0.5,
            coupling,
            0,
            LocalQpOptions::default(),
        );
        let offset_a: Vec<f64> = (0..m).map(|i| 0.1 - 0.01 * i as f64).collect();
        let offset_b: Vec<f64> = (0..m).map(|i| -0.15 + 0.02 * i as f64).collect();

        let mut warm = InnerState::new(t, m);
        qp.solve(&offset_a, &mut warm).unwrap();
        qp.solve(&offset_b, &mut warm).unwrap();

        let mut cold = InnerState::new(t, m);
        qp.solve(&offset_b, &mut cold).unwrap();

        let v_warm = qp.objective(&offset_b, &warm.x_hat, &warm.s_hat);
        let v_cold = qp.objective(&offset_b, &cold.x_hat, &cold.s_hat);
        assert!((v_warm - v_cold).abs() <= 10.0 * qp.opts.tol.max(1e-10) * v_cold.abs().max(1.0));
    }

    #[test]
    fn slack_block_is_clipped_stationary_point() {
        let t = 4;
        let coupling = tiny_coupling(t, 1);
        let spec = ev_spec(t);
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let m = coupling.n_rows();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let offset: Vec<f64> = (0..m).map(|_| rng.random_range(-0.4..0.4)).collect();
        let mut qp = LocalQp::new(
            poly,
            vec![0.08; t],
            spec.kappa,
            0.6,
            Arc::clone(&coupling),
            0,
            LocalQpOptions::default(),
        );
        let mut state = InnerState::new(t, m);
        qp.solve(&offset, &mut state).unwrap();
        let expected = optimal_slack(&coupling, 0, &state.x_hat, &offset);
        for (a, b) in state.s_hat.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(feasibility_residual(qp.polytope(), &state.x_hat, &state.s_hat) <= 1e-8);
    }

    #[test]
    fn reports_iteration_cap_with_best_iterate() {
        let t = 4;
        let coupling = tiny_coupling(t, 1);
        let spec = ev_spec(t);
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let m = coupling.n_rows();
        let mut qp = LocalQp::new(
            poly,
            vec![0.1; t],
            spec.kappa,
            0.5,
            coupling,
            0,
            LocalQpOptions {
                tol: 1e-8,
                max_iter: Some(2),
                ..Default::default()
            },
        );
        let offset = vec![0.3; m];
        let mut state = InnerState::new(t, m);
        match qp.solve(&offset, &mut state) {
            Err(LocalQpError::IterationCap { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected iteration cap, got {other:?}"),
        }
    }

    #[test]
    fn decoupled_solver_spreads_demand_under_flat_price() {
        // Flat price and κ > 0: the unique optimum of the profile-only
        // problem is the uniform spread of the demand over the window.
        let t = 6;
        let mut spec = ev_spec(5);
        spec.arrival = 1;
        spec.soc_target = 0.7;
        let poly = build_polytope(&spec, t, 0.5).unwrap();
        let total = poly.total;
        let mut qp = LocalQp::decoupled(poly, vec![0.1; t], spec.kappa, LocalQpOptions::default());
        let mut state = InnerState::new(t, 0);
        qp.solve(&[], &mut state).unwrap();
        let expect = total / 4.0;
        for i in 0..t {
            if i >= 1 && i < 5 {
                assert!((state.x_hat[i] - expect).abs() < 1e-7);
            } else {
                assert_eq!(state.x_hat[i], 0.0);
            }
        }
    }
}
