//! The coupled network constraint `Σₙ Γₙ xₙ ≤ w` tying the fleet to the
//! feeder: thermal rows first (the Toeplitz response `Ξ`, identical for all
//! agents), then upper-voltage rows, then lower-voltage rows (the
//! block-diagonal repetitions of each customer's sensitivity column `Dₙ` and
//! its negation). The headroom `w` stacks the thermal headroom `𝔍` over the
//! voltage headrooms `V̄ - Ṽ` and `Ṽ - V̲`.
//!
//! `Γₙ` is never materialized: its structure (one shared T×T block plus one
//! ϰ-vector per agent) makes applications and Gram matrices cheap.

use alloc::vec;
use alloc::vec::Vec;

use crate::feeder::{BaselineSeries, SensitivityMatrices};
use crate::linalg::Mat;
use crate::thermal::{ThermalHeadroom, ThermalResponse};

/// Squared-voltage operating band per supply point [p.u.²].
#[derive(Debug, Clone)]
pub struct VoltageLimits {
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CouplingError {
    #[error("voltage limits invalid at supply point {supply_point}: need 0 < min < max, got [{min}, {max}]")]
    BadLimits {
        supply_point: usize,
        min: f64,
        max: f64,
    },
    #[error("dimension mismatch: {detail}")]
    Dimension { detail: alloc::string::String },
    #[error("baseline violates {count} network bound(s) before any EV acts; first: {first:?}")]
    ScenarioInfeasible { count: usize, first: Violation },
}

impl VoltageLimits {
    /// Symmetric band of ±`percent` about the nominal voltage magnitude:
    /// bounds on squared voltage are the squares of the magnitude limits.
    pub fn from_band_percent(percent: f64, v0: f64, kappa: usize) -> Result<Self, CouplingError> {
        let hi = 1.0 + percent / 100.0;
        let lo = 1.0 - percent / 100.0;
        let limits = VoltageLimits {
            v_min: vec![lo * lo * v0; kappa],
            v_max: vec![hi * hi * v0; kappa],
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        for (j, (&lo, &hi)) in self.v_min.iter().zip(&self.v_max).enumerate() {
            if !(0.0 < lo && lo < hi) {
                return Err(CouplingError::BadLimits {
                    supply_point: j,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }
}

/// Which band a coupling row enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Thermal,
    UpperVoltage,
    LowerVoltage,
}

/// A coupling row with negative slack.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: RowKind,
    /// Supply-point index for voltage rows; None for thermal rows.
    pub supply_point: Option<usize>,
    /// Step index, 0-based.
    pub step: usize,
    pub slack: f64,
}

/// Row scales applied by [`CouplingSystem::equilibrated`].
#[derive(Debug, Clone)]
pub struct RowScales {
    pub thermal: f64,
    /// Per supply point, shared by the upper and lower voltage rows.
    pub voltage: Vec<f64>,
}

/// Assembled coupling data for the whole fleet.
#[derive(Debug, Clone)]
pub struct CouplingSystem {
    horizon: usize,
    kappa: usize,
    /// Shared thermal block Ξ (T×T lower triangular).
    xi: Mat,
    /// Per-agent voltage sensitivity column Dₙ (length ϰ).
    d_cols: Vec<Vec<f64>>,
    /// Headroom vector, length T + 2ϰT.
    w: Vec<f64>,
}

impl CouplingSystem {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_supply_points(&self) -> usize {
        self.kappa
    }

    pub fn n_agents(&self) -> usize {
        self.d_cols.len()
    }

    /// Coupling row count m = T + 2ϰT.
    pub fn n_rows(&self) -> usize {
        self.horizon + 2 * self.kappa * self.horizon
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn xi(&self) -> &Mat {
        &self.xi
    }

    pub fn d_col(&self, agent: usize) -> &[f64] {
        &self.d_cols[agent]
    }

    /// Decodes a row index into (kind, supply point, step).
    pub fn row_info(&self, row: usize) -> (RowKind, Option<usize>, usize) {
        let t = self.horizon;
        let kt = self.kappa * t;
        if row < t {
            (RowKind::Thermal, None, row)
        } else if row < t + kt {
            let r = row - t;
            (RowKind::UpperVoltage, Some(r % self.kappa), r / self.kappa)
        } else {
            let r = row - t - kt;
            (RowKind::LowerVoltage, Some(r % self.kappa), r / self.kappa)
        }
    }

    /// Γₙ x for one agent.
    pub fn gamma_apply(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.horizon);
        let t = self.horizon;
        let kt = self.kappa * t;
        let mut out = vec![0.0; self.n_rows()];
        let xi_x = self.xi.matvec(x);
        out[..t].copy_from_slice(&xi_x);
        let d = &self.d_cols[agent];
        for step in 0..t {
            let xt = x[step];
            if xt != 0.0 {
                for j in 0..self.kappa {
                    out[t + step * self.kappa + j] = d[j] * xt;
                    out[t + kt + step * self.kappa + j] = -d[j] * xt;
                }
            }
        }
        out
    }

    /// Γₙᵀ v for one agent.
    pub fn gamma_apply_t(&self, agent: usize, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_rows());
        let t = self.horizon;
        let kt = self.kappa * t;
        let mut out = self.xi.matvec_t(&v[..t]);
        let d = &self.d_cols[agent];
        for step in 0..t {
            let mut acc = 0.0;
            for j in 0..self.kappa {
                acc += d[j] * (v[t + step * self.kappa + j] - v[t + kt + step * self.kappa + j]);
            }
            out[step] += acc;
        }
        out
    }

    /// ΓₙᵀΓₙ = ΞᵀΞ + 2‖Dₙ‖²·I (the voltage blocks are diagonal repetitions).
    pub fn gamma_gram(&self, agent: usize) -> Mat {
        let mut g = self.xi.gram();
        let d2: f64 = self.d_cols[agent].iter().map(|v| v * v).sum();
        g.add_diag(2.0 * d2);
        g
    }

    /// ΓₙᵀΓₘ for a pair of agents: ΞᵀΞ + 2(Dₙ·Dₘ)·I.
    pub fn gamma_cross_gram(&self, a: usize, b: usize) -> Mat {
        let mut g = self.xi.gram();
        let dd: f64 = self.d_cols[a]
            .iter()
            .zip(&self.d_cols[b])
            .map(|(x, y)| x * y)
            .sum();
        g.add_diag(2.0 * dd);
        g
    }

    /// Σₙ Γₙ xₙ over the fleet.
    pub fn fleet_image(&self, x_fleet: &[Vec<f64>]) -> Vec<f64> {
        debug_assert_eq!(x_fleet.len(), self.n_agents());
        let t = self.horizon;
        let kt = self.kappa * t;
        let mut total_x = vec![0.0; t];
        for x in x_fleet {
            for (a, b) in total_x.iter_mut().zip(x) {
                *a += b;
            }
        }
        let mut out = vec![0.0; self.n_rows()];
        let xi_x = self.xi.matvec(&total_x);
        out[..t].copy_from_slice(&xi_x);
        for (x, d) in x_fleet.iter().zip(&self.d_cols) {
            for step in 0..t {
                let xt = x[step];
                if xt != 0.0 {
                    for j in 0..self.kappa {
                        out[t + step * self.kappa + j] += d[j] * xt;
                        out[t + kt + step * self.kappa + j] -= d[j] * xt;
                    }
                }
            }
        }
        out
    }

    /// Slack `w - Σₙ Γₙ xₙ`.
    pub fn slack(&self, x_fleet: &[Vec<f64>]) -> Vec<f64> {
        let image = self.fleet_image(x_fleet);
        self.w.iter().zip(image).map(|(wi, gi)| wi - gi).collect()
    }

    /// Rows violated by the fleet profile (slack < 0).
    pub fn violation_report(&self, x_fleet: &[Vec<f64>]) -> Vec<Violation> {
        self.violation_report_with_tol(x_fleet, 0.0)
    }

    /// Rows with slack < -tol, for reporting solutions that are feasible up
    /// to a solver tolerance.
    pub fn violation_report_with_tol(&self, x_fleet: &[Vec<f64>], tol: f64) -> Vec<Violation> {
        self.slack(x_fleet)
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < -tol)
            .map(|(row, &s)| {
                let (kind, supply_point, step) = self.row_info(row);
                Violation {
                    kind,
                    supply_point,
                    step,
                    slack: s,
                }
            })
            .collect()
    }

    /// Row-equilibrated copy: every row of the stacked `[Γ₁ … Γ_N]` is scaled
    /// to unit infinity-norm (w scales along). The constraint set is
    /// unchanged; duals of the scaled system are `scale⁻¹` times the
    /// originals. Thermal rows share one scale, voltage rows one per supply
    /// point, so the scaled system keeps the exact same structure.
    pub fn equilibrated(&self) -> (CouplingSystem, RowScales) {
        let xi_mag = self.xi[(0, 0)].abs();
        let thermal = if xi_mag > 1e-300 { 1.0 / xi_mag } else { 1.0 };
        let voltage: Vec<f64> = (0..self.kappa)
            .map(|j| {
                let mag = self.d_cols.iter().fold(0.0_f64, |m, d| m.max(d[j].abs()));
                if mag > 1e-300 {
                    1.0 / mag
                } else {
                    1.0
                }
            })
            .collect();

        let t = self.horizon;
        let kt = self.kappa * t;
        let mut xi = self.xi.clone();
        xi.scale(thermal);
        let d_cols = self
            .d_cols
            .iter()
            .map(|d| d.iter().zip(&voltage).map(|(v, s)| v * s).collect())
            .collect();
        let mut w = self.w.clone();
        for (row, wi) in w.iter_mut().enumerate() {
            if row < t {
                *wi *= thermal;
            } else {
                let r = row - t;
                let j = if r < kt {
                    r % self.kappa
                } else {
                    (r - kt) % self.kappa
                };
                *wi *= voltage[j];
            }
        }
        (
            CouplingSystem {
                horizon: t,
                kappa: self.kappa,
                xi,
                d_cols,
                w,
            },
            RowScales { thermal, voltage },
        )
    }
}

/// Assembles the coupled constraint from the feeder sensitivities, baseline
/// voltages, thermal response/headroom, and voltage limits. Fails when the
/// baseline alone already violates a bound (some headroom entry negative).
pub fn assemble(
    sens: &SensitivityMatrices,
    baseline: &BaselineSeries,
    resp: &ThermalResponse,
    headroom: &ThermalHeadroom,
    limits: &VoltageLimits,
) -> Result<CouplingSystem, CouplingError> {
    limits.validate()?;
    let kappa = sens.n_supply_points();
    let t = baseline.horizon();
    if resp.horizon() != t || headroom.values.len() != t {
        return Err(CouplingError::Dimension {
            detail: alloc::format!("thermal horizon {} vs baseline horizon {t}", resp.horizon()),
        });
    }
    if limits.v_min.len() != kappa || limits.v_max.len() != kappa {
        return Err(CouplingError::Dimension {
            detail: alloc::format!(
                "limits cover {} supply points, feeder has {kappa}",
                limits.v_min.len()
            ),
        });
    }

    let v_tilde = baseline.v_tilde();
    let mut w = Vec::with_capacity(t + 2 * kappa * t);
    w.extend_from_slice(&headroom.values);
    for step in 0..t {
        for j in 0..kappa {
            w.push(limits.v_max[j] - v_tilde[step * kappa + j]);
        }
    }
    for step in 0..t {
        for j in 0..kappa {
            w.push(v_tilde[step * kappa + j] - limits.v_min[j]);
        }
    }

    let system = CouplingSystem {
        horizon: t,
        kappa,
        xi: resp.xi.clone(),
        d_cols: sens.d_cols.clone(),
        w,
    };

    let baseline_violations: Vec<Violation> = system
        .w
        .iter()
        .enumerate()
        .filter(|(_, &wi)| wi < 0.0)
        .map(|(row, &wi)| {
            let (kind, supply_point, step) = system.row_info(row);
            Violation {
                kind,
                supply_point,
                step,
                slack: wi,
            }
        })
        .collect();
    if let Some(first) = baseline_violations.first() {
        return Err(CouplingError::ScenarioInfeasible {
            count: baseline_violations.len(),
            first: first.clone(),
        });
    }
    Ok(system)
}
