//! Centralized reference solver: minimizes the fleet cost over every battery
//! polytope subject to the coupled network constraint, as one convex QP.
//!
//! The same operator splitting as the per-agent subproblem, lifted to the
//! product space: the smooth block solves one dense normal-equation system
//! over all charge profiles (factored once; the coupling makes it
//! block-dense but the blocks differ only by diagonal shifts), and the
//! constraint pieces project independently per agent, plus one orthant
//! projection for the shared slack of `ΣΓₙxₙ + S = w`. Its optimum is the
//! yardstick for the distributed routine's relative error.

use alloc::vec;
use alloc::vec::Vec;

use crate::coupling::Violation;
use crate::linalg::{Cholesky, Mat};
use crate::localqp::project_polytope_box;
use crate::problem::Problem;

#[derive(Debug, Clone, Copy)]
pub struct CentralOptions {
    /// Initial splitting penalty; `None` uses the curvature heuristic of the
    /// per-agent subproblems lifted to the fleet.
    pub omega: Option<f64>,
    /// Residual tolerance (primal and dual, infinity norms).
    pub tol: f64,
    pub max_iter: usize,
    /// Solve on the row-equilibrated coupling system.
    pub row_scaling: bool,
    /// Over-relaxation factor, 1.0 disables.
    pub over_relax: f64,
}

impl Default for CentralOptions {
    fn default() -> Self {
        CentralOptions {
            omega: None,
            tol: 1e-9,
            max_iter: 400_000,
            row_scaling: true,
            over_relax: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CentralError {
    #[error(
        "no convergence in {iterations} iterations (residual {residual:.3e}); \
         {violations} coupling rows still violated — scenario may be infeasible"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        violations: usize,
        first_violation: Option<Violation>,
    },
}

#[derive(Debug, Clone)]
pub struct CentralSolution {
    pub x_fleet: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the coupled problem to `opts.tol`.
pub fn solve_centralized(
    problem: &Problem,
    opts: &CentralOptions,
) -> Result<CentralSolution, CentralError> {
    let n = problem.n_agents();
    let t = problem.horizon();
    let coupling = if opts.row_scaling {
        alloc::sync::Arc::new(problem.coupling.equilibrated().0)
    } else {
        alloc::sync::Arc::clone(&problem.coupling)
    };
    let m = coupling.n_rows();
    let w = coupling.w();
    let wy_ratio = 1.0 / crate::localqp::cumulative_gram_norm(t);
    // Coupling-block penalty ratio: balances the stacked [Γ₁ … Γ_N] operator
    // norm (row-sum bound on λmax of one Gram, times the fleet size) against
    // the identity copy blocks.
    let wc_ratio = {
        let gram = coupling.gamma_gram(0);
        let lam = (0..gram.rows())
            .map(|i| gram.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
            .max(1e-6);
        1.0 / (lam * n as f64)
    };
    let lin = problem.price_linear();
    let mut omega = opts.omega.unwrap_or_else(|| {
        // With all constraint blocks normalized to unit operator norm, the
        // balanced master penalty is the geometric mean of the smallest
        // objective curvature and unit constraint curvature.
        let obj_curv = problem
            .specs
            .iter()
            .map(|s| 2.0 * s.kappa)
            .fold(f64::INFINITY, f64::min)
            .max(1e-4);
        libm::sqrt(obj_curv).clamp(1e-4, 10.0)
    });

    // Normal-equation matrix: H_nm = δ_nm[(2κ_n+ω)I + ωTᵀT] + ω Γₙᵀ Γₘ.
    // The Γ cross-blocks are cached once; the factor is rebuilt whenever the
    // penalty adapts.
    let dim = n * t;
    let cross: Vec<Vec<Mat>> = (0..n)
        .map(|a| (0..n).map(|b| coupling.gamma_cross_gram(a, b)).collect())
        .collect();
    let build = |omega: f64| -> Cholesky {
        let mut h = Mat::zeros(dim, dim);
        for a in 0..n {
            for b in 0..n {
                let block = &cross[a][b];
                for i in 0..t {
                    for j in 0..t {
                        h[(a * t + i, b * t + j)] = omega * wc_ratio * block[(i, j)];
                    }
                }
            }
        }
        for a in 0..n {
            for i in 0..t {
                for j in 0..t {
                    h[(a * t + i, a * t + j)] += omega * wy_ratio * (t - i.max(j)) as f64;
                }
                h[(a * t + i, a * t + i)] += 2.0 * problem.specs[a].kappa + omega;
            }
        }
        Cholesky::new(&h).expect("normal equations are positive definite")
    };
    let mut chol = build(omega);

    let mut x: Vec<Vec<f64>> = vec![vec![0.0; t]; n];
    // Warm start the copies from the decoupled per-EV optima; when the
    // network constraint is slack this is already the solution.
    let mut x_hat: Vec<Vec<f64>> = Vec::with_capacity(n);
    for a in 0..n {
        let mut qp = crate::localqp::LocalQp::decoupled(
            problem.polytopes[a].clone(),
            lin.clone(),
            problem.specs[a].kappa,
            crate::localqp::LocalQpOptions {
                tol: 1e-9,
                max_iter: Some(100_000),
                ..Default::default()
            },
        );
        let mut st = crate::localqp::InnerState::new(t, 0);
        match qp.solve(&[], &mut st) {
            Ok(_) => x_hat.push(st.x_hat),
            Err(_) => x_hat.push(vec![0.0; t]),
        }
    }
    let mut y_hat: Vec<Vec<f64>> = x_hat
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            x.iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        })
        .collect();
    let image0 = coupling.fleet_image(&x_hat);
    let mut s_hat: Vec<f64> = (0..m).map(|i| (w[i] - image0[i]).max(0.0)).collect();
    let mut u_x: Vec<Vec<f64>> = vec![vec![0.0; t]; n];
    let mut u_y: Vec<Vec<f64>> = vec![vec![0.0; t]; n];
    let mut u_s = vec![0.0; m];
    for a in 0..n {
        x[a].copy_from_slice(&x_hat[a]);
    }

    let mut rhs = vec![0.0; dim];
    let mut prev_x_hat: Vec<Vec<f64>> = x_hat.clone();
    let mut prev_y_hat: Vec<Vec<f64>> = y_hat.clone();
    let mut prev_s_hat = s_hat.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut next_adapt = 50usize;

    while iterations < opts.max_iter {
        iterations += 1;

        // Smooth block.
        let mut coupling_term = vec![0.0; m];
        for i in 0..m {
            coupling_term[i] = s_hat[i] - w[i] + u_s[i];
        }
        for a in 0..n {
            let gt = coupling.gamma_apply_t(a, &coupling_term);
            let base = a * t;
            for i in 0..t {
                rhs[base + i] =
                    -lin[i] + omega * (x_hat[a][i] - u_x[a][i]) - omega * wc_ratio * gt[i];
            }
            let mut suffix = 0.0;
            for i in (0..t).rev() {
                suffix += y_hat[a][i] - u_y[a][i];
                rhs[base + i] += omega * wy_ratio * suffix;
            }
        }
        chol.solve_in_place(&mut rhs);
        for a in 0..n {
            x[a].copy_from_slice(&rhs[a * t..(a + 1) * t]);
        }

        let image = coupling.fleet_image(&x);
        let alpha = opts.over_relax;
        let mut r_primal: f64 = 0.0;

        let mut target = vec![0.0; t];
        for a in 0..n {
            prev_x_hat[a].copy_from_slice(&x_hat[a]);
            for i in 0..t {
                let relaxed = alpha * x[a][i] + (1.0 - alpha) * prev_x_hat[a][i];
                target[i] = relaxed + u_x[a][i];
            }
            x_hat[a].copy_from_slice(&target);
            project_polytope_box(&problem.polytopes[a], &mut x_hat[a]);
            for i in 0..t {
                u_x[a][i] = target[i] - x_hat[a][i];
                r_primal = r_primal.max((x[a][i] - x_hat[a][i]).abs());
            }

            prev_y_hat[a].copy_from_slice(&y_hat[a]);
            let poly = &problem.polytopes[a];
            let mut cum = 0.0;
            for i in 0..t {
                cum += x[a][i];
                let relaxed = alpha * cum + (1.0 - alpha) * prev_y_hat[a][i];
                let target = relaxed + u_y[a][i];
                y_hat[a][i] = target.clamp(poly.cum_min, poly.cum_max);
                u_y[a][i] = target - y_hat[a][i];
                r_primal = r_primal.max((cum - y_hat[a][i]).abs());
            }
        }

        prev_s_hat.copy_from_slice(&s_hat);
        for i in 0..m {
            let relaxed = alpha * image[i] + (1.0 - alpha) * (w[i] - prev_s_hat[i]);
            let target = w[i] - relaxed - u_s[i];
            s_hat[i] = target.max(0.0);
            u_s[i] += relaxed + s_hat[i] - w[i];
            r_primal = r_primal.max((image[i] + s_hat[i] - w[i]).abs());
        }

        // Dual residual ω‖Aᵀ dz‖∞ per agent block, with the shared slack
        // change mapped through Γₙᵀ.
        let ds: Vec<f64> = s_hat
            .iter()
            .zip(&prev_s_hat)
            .map(|(a, b)| a - b)
            .collect();
        let mut r_dual: f64 = 0.0;
        for a in 0..n {
            let gds = coupling.gamma_apply_t(a, &ds);
            let mut suffix = 0.0;
            for i in (0..t).rev() {
                suffix += y_hat[a][i] - prev_y_hat[a][i];
                let v = omega * (x_hat[a][i] - prev_x_hat[a][i])
                    + omega * wc_ratio * gds[i]
                    + omega * wy_ratio * suffix;
                r_dual = r_dual.max(v.abs());
            }
        }

        residual = r_primal.max(r_dual);
        if residual <= opts.tol {
            let objective = problem.objective(&x_hat);
            return Ok(CentralSolution {
                x_fleet: x_hat,
                objective,
                iterations,
                residual,
            });
        }

        if iterations == next_adapt {
            next_adapt *= 2;
            if let Some(scale) = crate::localqp::penalty_rebalance(omega, r_primal, r_dual) {
                let inv = 1.0 / scale;
                for a in 0..n {
                    for v in u_x[a].iter_mut().chain(u_y[a].iter_mut()) {
                        *v *= inv;
                    }
                }
                for v in u_s.iter_mut() {
                    *v *= inv;
                }
                omega *= scale;
                chol = build(omega);
            }
        }
    }

    let violations = problem.coupling.violation_report_with_tol(&x_hat, 1e-7);
    Err(CentralError::NotConverged {
        iterations,
        residual,
        violations: violations.len(),
        first_violation: violations.first().cloned(),
    })
}
