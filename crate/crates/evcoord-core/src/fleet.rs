//! Per-EV battery model: feasible charge/discharge profiles, state-of-charge
//! evolution, and the customer's operational cost.
//!
//! A profile `x` (kW per step, positive charging) is feasible when it
//! respects the rate box, keeps the cumulative energy inside the SoC
//! corridor, hits the departure target exactly, and is zero outside the
//! plug-in window. The corridor form uses the lower-triangular all-ones
//! matrix `Tmat`: `c̲·1 ≤ Tmat x ≤ c̄·1` with
//! `c̲ = c(σ̲-σ̂)/(μΔ)`, `c̄ = c(σ̄-σ̂)/(μΔ)`, and the demand equality
//! `1ᵀx = (σ*-σ̂)c/(μΔ)` so that the departure SoC lands on σ* under the
//! efficiency-weighted SoC recursion.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::feeder::Phase;
use crate::linalg::Mat;

/// Design parameters of one EV.
#[derive(Debug, Clone)]
pub struct EvSpec {
    /// Arrival step index a ∈ [0, T]; the EV can act on steps (a, d] in
    /// 1-based time, i.e. array indices [a, d).
    pub arrival: usize,
    /// Departure step index d ∈ [a, T].
    pub departure: usize,
    /// Battery capacity c [kWh].
    pub capacity_kwh: f64,
    /// Initial SoC σ̂ (fraction).
    pub soc_init: f64,
    /// Target SoC at departure σ*.
    pub soc_target: f64,
    /// SoC bounds σ̲, σ̄.
    pub soc_min: f64,
    pub soc_max: f64,
    /// Conversion efficiency μ ∈ (0, 1].
    pub efficiency: f64,
    /// Discharge/charge rate bounds [kW], x̲ ≤ 0 ≤ x̄.
    pub rate_min_kw: f64,
    pub rate_max_kw: f64,
    /// Degradation coefficient κ [$/kW²].
    pub kappa: f64,
    /// Supply point the customer attaches to.
    pub supply_point: (usize, Phase),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FleetError {
    #[error("invalid EV spec: {detail}")]
    InvalidSpec { detail: String },
    #[error("infeasible EV spec: {detail}")]
    Infeasible { detail: String },
    #[error("length {got} does not match horizon {expected}")]
    Length { got: usize, expected: usize },
}

impl EvSpec {
    /// Validates the invariants on construction-critical fields.
    pub fn validate(&self, horizon: usize) -> Result<(), FleetError> {
        let fail = |detail: String| Err(FleetError::InvalidSpec { detail });
        if self.arrival > self.departure || self.departure > horizon {
            return fail(format!(
                "window ({}, {}] outside horizon {horizon}",
                self.arrival, self.departure
            ));
        }
        if !(self.capacity_kwh > 0.0) {
            return fail(format!("capacity {} kWh not positive", self.capacity_kwh));
        }
        if !(0.0 <= self.soc_min
            && self.soc_min <= self.soc_init
            && self.soc_init <= self.soc_max
            && self.soc_max <= 1.0)
        {
            return fail(format!(
                "SoC ordering violated: 0 ≤ {} ≤ {} ≤ {} ≤ 1",
                self.soc_min, self.soc_init, self.soc_max
            ));
        }
        if !(self.soc_min <= self.soc_target && self.soc_target <= self.soc_max) {
            return fail(format!(
                "target SoC {} outside [{}, {}]",
                self.soc_target, self.soc_min, self.soc_max
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return fail(format!("efficiency {} outside (0, 1]", self.efficiency));
        }
        if !(self.rate_min_kw <= 0.0 && 0.0 <= self.rate_max_kw) {
            return fail(format!(
                "rate bounds [{}, {}] must bracket zero",
                self.rate_min_kw, self.rate_max_kw
            ));
        }
        if self.kappa < 0.0 {
            return fail(format!("kappa {} negative", self.kappa));
        }
        Ok(())
    }

    /// Charging demand e = (σ* - σ̂)·c [kWh].
    pub fn demand_kwh(&self) -> f64 {
        (self.soc_target - self.soc_init) * self.capacity_kwh
    }
}

/// State of charge after each step: `σ(t) = σ̂ + (μΔ/c)·Σ_{τ≤t} x(τ)`.
pub fn soc_profile(spec: &EvSpec, x: &[f64], delta_h: f64) -> Vec<f64> {
    let gain = spec.efficiency * delta_h / spec.capacity_kwh;
    let mut cum = 0.0;
    x.iter()
        .map(|&xt| {
            cum += xt;
            spec.soc_init + gain * cum
        })
        .collect()
}

/// Operational cost `Ω = Σₜ {Δ η(t) x(t) + κ x(t)²}` [$].
pub fn operational_cost(spec: &EvSpec, price: &[f64], x: &[f64], delta_h: f64) -> f64 {
    debug_assert_eq!(price.len(), x.len());
    price
        .iter()
        .zip(x)
        .map(|(&eta, &xt)| delta_h * eta * xt + spec.kappa * xt * xt)
        .sum()
}

/// Gradient of the operational cost: `Δη + 2κx`.
pub fn cost_gradient(spec: &EvSpec, price: &[f64], x: &[f64], delta_h: f64) -> Vec<f64> {
    price
        .iter()
        .zip(x)
        .map(|(&eta, &xt)| delta_h * eta + 2.0 * spec.kappa * xt)
        .collect()
}

/// Stacked linear description of the feasible profile set, kept in a
/// structured form (boxes, corridor, one equality, availability) that the
/// solvers exploit directly. `a_ineq`/`a_eq` materialize the row-stacked
/// matrices for cross-checks.
#[derive(Debug, Clone)]
pub struct BatteryPolytope {
    horizon: usize,
    pub rate_min: f64,
    pub rate_max: f64,
    /// Corridor bounds on cumulative charge [kW·steps].
    pub cum_min: f64,
    pub cum_max: f64,
    /// Required total Σx = (σ*-σ̂)c/(μΔ) [kW·steps].
    pub total: f64,
    avail: Vec<bool>,
    window: Vec<usize>,
}

impl BatteryPolytope {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn availability(&self) -> &[bool] {
        &self.avail
    }

    /// Indices of the plug-in window, ascending.
    pub fn window(&self) -> &[usize] {
        &self.window
    }

    /// Membership test with absolute tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.check(x, tol).is_ok()
    }

    /// Detailed membership check; the error names the violated constraint.
    pub fn check(&self, x: &[f64], tol: f64) -> Result<(), FleetError> {
        if x.len() != self.horizon {
            return Err(FleetError::Length {
                got: x.len(),
                expected: self.horizon,
            });
        }
        let mut cum = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            if !self.avail[t] && xt.abs() > tol {
                return Err(FleetError::Infeasible {
                    detail: format!("nonzero power {xt} outside window at step {t}"),
                });
            }
            if xt < self.rate_min - tol || xt > self.rate_max + tol {
                return Err(FleetError::Infeasible {
                    detail: format!(
                        "rate {xt} outside [{}, {}] at step {t}",
                        self.rate_min, self.rate_max
                    ),
                });
            }
            cum += xt;
            if cum < self.cum_min - tol || cum > self.cum_max + tol {
                return Err(FleetError::Infeasible {
                    detail: format!(
                        "cumulative charge {cum} outside [{}, {}] after step {t}",
                        self.cum_min, self.cum_max
                    ),
                });
            }
        }
        if (cum - self.total).abs() > tol {
            return Err(FleetError::Infeasible {
                detail: format!("total {cum} misses demand {}", self.total),
            });
        }
        Ok(())
    }

    /// `[I; -I; Tmat; -Tmat]`, 4T×T; membership reads `A_ineq x ≥ b_ineq`.
    pub fn a_ineq(&self) -> Mat {
        let t = self.horizon;
        let mut a = Mat::zeros(4 * t, t);
        for i in 0..t {
            a[(i, i)] = 1.0;
            a[(t + i, i)] = -1.0;
            for j in 0..=i {
                a[(2 * t + i, j)] = 1.0;
                a[(3 * t + i, j)] = -1.0;
            }
        }
        a
    }

    pub fn b_ineq(&self) -> Vec<f64> {
        let t = self.horizon;
        let mut b = vec![0.0; 4 * t];
        for i in 0..t {
            b[i] = self.rate_min;
            b[t + i] = -self.rate_max;
            b[2 * t + i] = self.cum_min;
            b[3 * t + i] = -self.cum_max;
        }
        b
    }

    /// `[1ᵀ; I-ℒ]`, (T+1)×T; membership reads `A_eq x = b_eq`.
    pub fn a_eq(&self) -> Mat {
        let t = self.horizon;
        let mut a = Mat::zeros(t + 1, t);
        for j in 0..t {
            a[(0, j)] = 1.0;
            if !self.avail[j] {
                a[(1 + j, j)] = 1.0;
            }
        }
        a
    }

    pub fn b_eq(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.horizon + 1];
        b[0] = self.total;
        b
    }

    /// Draws a feasible profile: starts from the uniform profile and applies
    /// random total-preserving shifts that respect the box and corridor.
    pub fn sample_feasible<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = vec![0.0; self.horizon];
        let w = self.window.len();
        if w == 0 {
            return x;
        }
        let uniform = self.total / w as f64;
        for &t in &self.window {
            x[t] = uniform;
        }
        let mut cum: Vec<f64> = Vec::with_capacity(self.horizon);
        let mut acc = 0.0;
        for &xt in &x {
            acc += xt;
            cum.push(acc);
        }
        for _ in 0..3 * w {
            if w < 2 {
                break;
            }
            let a = self.window[rng.random_range(0..w)];
            let b = self.window[rng.random_range(0..w)];
            if a == b {
                continue;
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            // +δ at i and -δ at j keeps the total; prefix sums on [i, j)
            // move by +δ.
            let mut hi = (self.rate_max - x[i]).min(x[j] - self.rate_min);
            let mut lo = (self.rate_min - x[i]).max(x[j] - self.rate_max);
            for p in i..j {
                hi = hi.min(self.cum_max - cum[p]);
                lo = lo.max(self.cum_min - cum[p]);
            }
            if hi <= lo {
                continue;
            }
            let delta = rng.random_range(lo..hi);
            x[i] += delta;
            x[j] -= delta;
            for p in i..j {
                cum[p] += delta;
            }
        }
        x
    }
}

/// Builds the feasible set of an EV over a horizon of `t` steps, rejecting
/// specs whose demand cannot be met inside the window.
pub fn build_polytope(
    spec: &EvSpec,
    t: usize,
    delta_h: f64,
) -> Result<BatteryPolytope, FleetError> {
    spec.validate(t)?;
    let scale = spec.capacity_kwh / (spec.efficiency * delta_h);
    let cum_min = (spec.soc_min - spec.soc_init) * scale;
    let cum_max = (spec.soc_max - spec.soc_init) * scale;
    let total = (spec.soc_target - spec.soc_init) * scale;
    let avail: Vec<bool> = (0..t)
        .map(|i| spec.arrival <= i && i < spec.departure)
        .collect();
    let window: Vec<usize> = (0..t).filter(|&i| avail[i]).collect();

    if window.is_empty() && total.abs() > 1e-12 {
        return Err(FleetError::Infeasible {
            detail: format!("demand {total} kW·steps with an empty plug-in window"),
        });
    }
    // Forward reachable interval of the cumulative charge over the window;
    // the spec is feasible iff the demand total lies inside it at departure.
    let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
    for _ in &window {
        lo = (lo + spec.rate_min_kw).max(cum_min);
        hi = (hi + spec.rate_max_kw).min(cum_max);
    }
    let eps = 1e-9 * total.abs().max(1.0);
    if total > hi + eps {
        return Err(FleetError::Infeasible {
            detail: format!(
                "demand {total} kW·steps exceeds achievable charge {hi} over {} steps (rate cap {} kW, SoC ceiling {})",
                window.len(),
                spec.rate_max_kw,
                cum_max
            ),
        });
    }
    if total < lo - eps {
        return Err(FleetError::Infeasible {
            detail: format!(
                "demand {total} kW·steps below achievable discharge {lo} over {} steps (rate floor {} kW, SoC floor {})",
                window.len(),
                spec.rate_min_kw,
                cum_min
            ),
        });
    }
    Ok(BatteryPolytope {
        horizon: t,
        rate_min: spec.rate_min_kw,
        rate_max: spec.rate_max_kw,
        cum_min,
        cum_max,
        total,
        avail,
        window,
    })
}
