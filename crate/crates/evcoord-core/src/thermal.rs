//! Feeder-head transformer thermal model: discrete-time core-temperature
//! dynamics linearized around an equilibrium, the horizon-stacked response,
//! and the thermal headroom available to EV charging.
//!
//! The single-mass dynamics are
//! `θ(t+1) = ϱ θ(t) + ϱ̂ i²(t) + ϱ̄ θ_a(t)`
//! and linearization around the equilibrium `(θ*, i*)` gives
//! `θ(t+1) = ϱ θ(t) + ϱ̃ i(t) + ϱ̄ θ_a(t) + β`. Stacking that recursion over
//! the horizon yields `θ = ϱ_vec θ₀ + Ξ i + ϱ̄_mat θ_a + β·geo`, where `Ξ` and
//! `ϱ̄_mat` are lower-triangular Toeplitz matrices and `geo` is the cumulative
//! geometric vector. `temperature_profile` evaluates the stacked form
//! explicitly so that the step recursion stays available as an independent
//! cross-check.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Transformer constants and the operating point for linearization.
#[derive(Debug, Clone, Copy)]
pub struct ThermalParams {
    /// Heat capacity C [J/K].
    pub heat_capacity: f64,
    /// Heat outflow resistance R [K/W].
    pub heat_resistance: f64,
    /// Coil resistance R_c [Ω].
    pub coil_resistance: f64,
    /// Step length [h]; converted to seconds internally.
    pub delta_h: f64,
    /// Equilibrium core temperature θ* [K].
    pub theta_star: f64,
    /// Equilibrium ambient temperature θ_a* [K].
    pub theta_ambient_star: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThermalError {
    #[error("discretization unstable: rho = {rho} outside (0, 1)")]
    UnstableDiscretization { rho: f64 },
    #[error("equilibrium current imaginary: theta* = {theta_star} K not above theta_a* = {theta_ambient_star} K")]
    ImaginaryEquilibriumCurrent {
        theta_star: f64,
        theta_ambient_star: f64,
    },
    #[error("series length {got} does not match horizon {expected}")]
    Length { got: usize, expected: usize },
}

/// Exogenous thermal disturbances over the horizon, sample indices 0..T-1.
#[derive(Debug, Clone)]
pub struct DisturbanceSeries {
    /// Ambient temperature θ_a [K].
    pub theta_ambient: Vec<f64>,
    /// Non-EV current i_d [A].
    pub current: Vec<f64>,
}

impl DisturbanceSeries {
    pub fn new(theta_ambient: Vec<f64>, current: Vec<f64>) -> Result<Self, ThermalError> {
        if theta_ambient.len() != current.len() {
            return Err(ThermalError::Length {
                got: current.len(),
                expected: theta_ambient.len(),
            });
        }
        Ok(DisturbanceSeries {
            theta_ambient,
            current,
        })
    }

    pub fn horizon(&self) -> usize {
        self.theta_ambient.len()
    }
}

/// Derived scalars and horizon-stacked matrices of the linearized dynamics.
#[derive(Debug, Clone)]
pub struct ThermalResponse {
    pub rho: f64,
    pub rho_hat: f64,
    pub rho_bar: f64,
    pub rho_tilde: f64,
    pub beta: f64,
    pub i_star: f64,
    /// [ϱ, ϱ², …, ϱᵀ].
    pub rho_vec: Vec<f64>,
    /// T×T lower-triangular Toeplitz, first column ϱ̃·[1, ϱ, …, ϱ^(T-1)].
    pub xi: Mat,
    /// Same Toeplitz structure with ϱ̄ in place of ϱ̃.
    pub rho_bar_mat: Mat,
    /// Cumulative geometric vector [1, 1+ϱ, …, Σ ϱ^i].
    pub geo: Vec<f64>,
}

impl ThermalResponse {
    pub fn horizon(&self) -> usize {
        self.rho_vec.len()
    }

    /// First column of Ξ: ϱ̃·[1, ϱ, …, ϱ^(T-1)].
    pub fn xi_first_col(&self) -> Vec<f64> {
        (0..self.horizon()).map(|i| self.xi[(i, 0)]).collect()
    }
}

fn toeplitz_lower(first_entry: f64, rho: f64, t: usize) -> Mat {
    let mut m = Mat::zeros(t, t);
    // Powers by iterated multiplication.
    let mut pow = vec![0.0; t];
    let mut acc = 1.0;
    for p in pow.iter_mut() {
        *p = acc;
        acc *= rho;
    }
    for i in 0..t {
        for j in 0..=i {
            m[(i, j)] = first_entry * pow[i - j];
        }
    }
    m
}

/// Linearizes the thermal dynamics and stacks them over a horizon of `t` steps.
pub fn linearize(params: &ThermalParams, t: usize) -> Result<ThermalResponse, ThermalError> {
    let delta_s = params.delta_h * SECONDS_PER_HOUR;
    let rho_bar = delta_s / (params.heat_resistance * params.heat_capacity);
    let rho = 1.0 - rho_bar;
    if rho <= 0.0 || rho >= 1.0 {
        return Err(ThermalError::UnstableDiscretization { rho });
    }
    let rho_hat = delta_s * params.coil_resistance / params.heat_capacity;
    let temp_gap = params.theta_star - params.theta_ambient_star;
    if temp_gap <= 0.0 {
        return Err(ThermalError::ImaginaryEquilibriumCurrent {
            theta_star: params.theta_star,
            theta_ambient_star: params.theta_ambient_star,
        });
    }
    let i_star = libm::sqrt(rho_bar * temp_gap / rho_hat);
    let rho_tilde = 2.0 * rho_hat * i_star;
    let beta = (1.0 - rho) * params.theta_star
        - rho_tilde * i_star
        - rho_bar * params.theta_ambient_star;

    let mut rho_vec = vec![0.0; t];
    let mut acc = 1.0;
    for r in rho_vec.iter_mut() {
        acc *= rho;
        *r = acc;
    }
    let mut geo = vec![0.0; t];
    let mut pow = 1.0;
    let mut sum = 0.0;
    for g in geo.iter_mut() {
        sum += pow;
        *g = sum;
        pow *= rho;
    }

    Ok(ThermalResponse {
        rho,
        rho_hat,
        rho_bar,
        rho_tilde,
        beta,
        i_star,
        rho_vec,
        xi: toeplitz_lower(rho_tilde, rho, t),
        rho_bar_mat: toeplitz_lower(rho_bar, rho, t),
        geo,
    })
}

/// Core temperature over the horizon from the stacked linearized form:
/// `θ = ϱ_vec θ₀ + Ξ i + ϱ̄_mat θ_a + β·geo`. `current` holds the aggregate
/// current samples i(0..T-1) in amperes.
pub fn temperature_profile(
    resp: &ThermalResponse,
    dist: &DisturbanceSeries,
    theta0: f64,
    current: &[f64],
) -> Result<Vec<f64>, ThermalError> {
    let t = resp.horizon();
    if dist.horizon() != t {
        return Err(ThermalError::Length {
            got: dist.horizon(),
            expected: t,
        });
    }
    if current.len() != t {
        return Err(ThermalError::Length {
            got: current.len(),
            expected: t,
        });
    }
    let xi_i = resp.xi.matvec(current);
    let amb = resp.rho_bar_mat.matvec(&dist.theta_ambient);
    let mut theta = vec![0.0; t];
    for k in 0..t {
        theta[k] = resp.rho_vec[k] * theta0 + xi_i[k] + amb[k] + resp.beta * resp.geo[k];
    }
    Ok(theta)
}

/// Thermal headroom left for the EV fleet.
#[derive(Debug, Clone)]
pub struct ThermalHeadroom {
    /// 𝔍, one entry per step [v_eff·K].
    pub values: Vec<f64>,
}

impl ThermalHeadroom {
    /// True when some entry is negative, i.e. the transformer bound is
    /// already violated before any EV acts.
    pub fn is_baseline_infeasible(&self) -> bool {
        self.values.iter().any(|&v| v < 0.0)
    }
}

/// Computes `𝔍 = v_eff·(θ_max·1 − ϱ_vec θ₀ − ϱ̄_mat θ_a − β·geo − Ξ i_d)`.
///
/// `v_eff` is the rms grid voltage divided by the watts-per-power-unit
/// constant of the scenario bases (1000 for kW), so that the fleet constraint
/// reads `Σₙ Ξ xₙ ≤ 𝔍` with xₙ in kW. An EV drawing x kW contributes
/// `i = x / v_eff` amperes.
pub fn thermal_headroom(
    resp: &ThermalResponse,
    dist: &DisturbanceSeries,
    theta0: f64,
    theta_max: f64,
    v_eff: f64,
) -> Result<ThermalHeadroom, ThermalError> {
    let t = resp.horizon();
    if dist.horizon() != t {
        return Err(ThermalError::Length {
            got: dist.horizon(),
            expected: t,
        });
    }
    let xi_id = resp.xi.matvec(&dist.current);
    let amb = resp.rho_bar_mat.matvec(&dist.theta_ambient);
    let values = (0..t)
        .map(|k| {
            v_eff
                * (theta_max
                    - resp.rho_vec[k] * theta0
                    - amb[k]
                    - resp.beta * resp.geo[k]
                    - xi_id[k])
        })
        .collect();
    Ok(ThermalHeadroom { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Parameters picked so that ϱ = 0.5 and ϱ̃ = 2 exactly:
    /// Δ = 0.5 h = 1800 s, R·C = 3600 s, ϱ̂ = 0.01, θ*-θ_a* = 200 K ⇒ i* = 100 A.
    fn reference_params() -> ThermalParams {
        ThermalParams {
            heat_capacity: 1.8e5,
            heat_resistance: 0.02,
            coil_resistance: 1.0,
            delta_h: 0.5,
            theta_star: 500.0,
            theta_ambient_star: 300.0,
        }
    }

    /// Forward recursion of the linearized step dynamics, used as the
    /// independent oracle for the stacked form.
    fn recursion_oracle(
        resp: &ThermalResponse,
        theta0: f64,
        current: &[f64],
        theta_a: &[f64],
    ) -> Vec<f64> {
        let mut theta = theta0;
        let mut out = Vec::with_capacity(current.len());
        for (i, ta) in current.iter().zip(theta_a) {
            theta = resp.rho * theta + resp.rho_tilde * i + resp.rho_bar * ta + resp.beta;
            out.push(theta);
        }
        out
    }

    #[test]
    fn derived_scalars_and_xi_match_hand_values() {
        let resp = linearize(&reference_params(), 3).unwrap();
        assert!((resp.rho - 0.5).abs() < 1e-12);
        assert!((resp.rho_tilde - 2.0).abs() < 1e-12);
        assert!((resp.i_star - 100.0).abs() < 1e-9);
        let expected = [[2.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.5, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((resp.xi[(i, j)] - expected[i][j]).abs() < 1e-12);
            }
        }
        assert!((resp.geo[2] - 1.75).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_inputs_hold_equilibrium_temperature() {
        let params = reference_params();
        let t = 6;
        let resp = linearize(&params, t).unwrap();
        let dist =
            DisturbanceSeries::new(vec![params.theta_ambient_star; t], vec![0.0; t]).unwrap();
        let theta =
            temperature_profile(&resp, &dist, params.theta_star, &vec![resp.i_star; t]).unwrap();
        for th in theta {
            assert!((th - params.theta_star).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_current_stays_below_equilibrium_trajectory() {
        let params = reference_params();
        let t = 5;
        let resp = linearize(&params, t).unwrap();
        let dist =
            DisturbanceSeries::new(vec![params.theta_ambient_star; t], vec![0.0; t]).unwrap();
        let idle = temperature_profile(&resp, &dist, params.theta_star, &vec![0.0; t]).unwrap();
        let loaded =
            temperature_profile(&resp, &dist, params.theta_star, &vec![resp.i_star; t]).unwrap();
        for (a, b) in idle.iter().zip(&loaded) {
            assert!(a < b);
        }
    }

    #[test]
    fn stacked_form_matches_step_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = rng.random_range(2..=8usize);
            let params = ThermalParams {
                heat_capacity: rng.random_range(5e4..5e5),
                heat_resistance: rng.random_range(0.005..0.05),
                coil_resistance: rng.random_range(0.2..2.0),
                delta_h: rng.random_range(0.1..1.0),
                theta_star: rng.random_range(380.0..500.0),
                theta_ambient_star: rng.random_range(270.0..320.0),
            };
            let Ok(resp) = linearize(&params, t) else {
                continue; // draw produced an unstable ϱ
            };
            let theta_a: Vec<f64> = (0..t).map(|_| rng.random_range(260.0..320.0)).collect();
            let current: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..200.0)).collect();
            let theta0 = rng.random_range(300.0..420.0);
            let dist = DisturbanceSeries::new(theta_a.clone(), vec![0.0; t]).unwrap();
            let stacked = temperature_profile(&resp, &dist, theta0, &current).unwrap();
            let recursive = recursion_oracle(&resp, theta0, &current, &theta_a);
            for (s, r) in stacked.iter().zip(&recursive) {
                assert!((s - r).abs() <= 1e-9 * r.abs().max(1.0), "{s} vs {r}");
            }
        }
    }

    #[test]
    fn monotone_in_current() {
        let params = reference_params();
        let t = 6;
        let resp = linearize(&params, t).unwrap();
        let dist = DisturbanceSeries::new(vec![300.0; t], vec![0.0; t]).unwrap();
        let base = vec![40.0; t];
        let theta = temperature_profile(&resp, &dist, 360.0, &base).unwrap();
        let bump_at = 2;
        let mut bumped = base.clone();
        bumped[bump_at] += 25.0;
        let theta_b = temperature_profile(&resp, &dist, 360.0, &bumped).unwrap();
        for k in 0..t {
            if k >= bump_at {
                assert!(theta_b[k] > theta[k]);
            } else {
                assert_eq!(theta_b[k], theta[k]);
            }
        }
    }

    #[test]
    fn profile_is_affine_in_current() {
        let params = reference_params();
        let t = 4;
        let resp = linearize(&params, t).unwrap();
        let dist = DisturbanceSeries::new(vec![290.0; t], vec![0.0; t]).unwrap();
        let i1 = vec![10.0, 0.0, 5.0, -3.0];
        let i2 = vec![-2.0, 8.0, 1.0, 4.0];
        let sum: Vec<f64> = i1.iter().zip(&i2).map(|(a, b)| a + b).collect();
        let zero = temperature_profile(&resp, &dist, 350.0, &vec![0.0; t]).unwrap();
        let t1 = temperature_profile(&resp, &dist, 350.0, &i1).unwrap();
        let t2 = temperature_profile(&resp, &dist, 350.0, &i2).unwrap();
        let ts = temperature_profile(&resp, &dist, 350.0, &sum).unwrap();
        for k in 0..t {
            let lhs = ts[k] - zero[k];
            let rhs = (t1[k] - zero[k]) + (t2[k] - zero[k]);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn headroom_zero_at_tight_bound() {
        // With θ₀ = θ_max, i_d = 0, θ_a = θ_a* the first headroom entry is
        // v_eff·[(1-ϱ)(θ_max-θ*) + ϱ̃ i*] and ϱ̃ i* = 2(1-ϱ)(θ*-θ_a*), so it
        // vanishes exactly when θ* = 2θ_a* - θ_max. Pick such a θ*: the
        // equilibrium sits far enough above the bound that the baseline
        // leaves no room at t = 1.
        let mut params = reference_params();
        let theta_max = 400.0;
        params.theta_ambient_star = 450.0;
        params.theta_star = 2.0 * params.theta_ambient_star - theta_max;
        let t = 3;
        let resp = linearize(&params, t).unwrap();
        let dist =
            DisturbanceSeries::new(vec![params.theta_ambient_star; t], vec![0.0; t]).unwrap();
        let head = thermal_headroom(&resp, &dist, theta_max, theta_max, 0.23).unwrap();
        assert!(head.values[0].abs() <= 1e-9);
        assert!(head.values[0] <= 1e-9);
    }

    #[test]
    fn headroom_scales_linearly_with_voltage() {
        let params = reference_params();
        let t = 4;
        let resp = linearize(&params, t).unwrap();
        let dist = DisturbanceSeries::new(vec![295.0; t], vec![30.0; t]).unwrap();
        let h1 = thermal_headroom(&resp, &dist, 360.0, 400.0, 0.23).unwrap();
        let h2 = thermal_headroom(&resp, &dist, 360.0, 400.0, 0.46).unwrap();
        for (a, b) in h1.values.iter().zip(&h2.values) {
            assert!((2.0 * a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn headroom_matches_direct_formula() {
        // Independent evaluation: build ϱ powers, Toeplitz sums, and the
        // geometric series with plain loops and compare entry by entry.
        let params = reference_params();
        let t = 4;
        let resp = linearize(&params, t).unwrap();
        let theta_a = [301.0, 299.5, 302.0, 300.0];
        let i_d = [20.0, 35.0, 10.0, 0.0];
        let dist = DisturbanceSeries::new(theta_a.to_vec(), i_d.to_vec()).unwrap();
        let theta0 = 365.0;
        let theta_max = 400.0;
        let v_eff = 0.23;
        let head = thermal_headroom(&resp, &dist, theta0, theta_max, v_eff).unwrap();
        for k in 0..t {
            let mut acc = theta_max - resp.rho_vec[k] * theta0;
            let mut geo = 0.0;
            for j in 0..=k {
                let mut pow = 1.0;
                for _ in 0..(k - j) {
                    pow *= resp.rho;
                }
                acc -= pow * resp.rho_bar * theta_a[j];
                acc -= pow * resp.rho_tilde * i_d[j];
                geo += pow;
            }
            acc -= resp.beta * geo;
            assert!((head.values[k] - v_eff * acc).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_unstable_and_inverted_equilibrium() {
        let mut params = reference_params();
        params.delta_h = 3.0; // ϱ̄ = 3 ⇒ ϱ = -2
        assert!(matches!(
            linearize(&params, 4),
            Err(ThermalError::UnstableDiscretization { .. })
        ));
        let mut params = reference_params();
        params.theta_star = params.theta_ambient_star - 1.0;
        assert!(matches!(
            linearize(&params, 4),
            Err(ThermalError::ImaginaryEquilibriumCurrent { .. })
        ));
    }
}
