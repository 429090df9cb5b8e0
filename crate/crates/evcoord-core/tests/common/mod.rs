//! Shared builders for small test scenarios on a two-node feeder.

use std::sync::Arc;

use evcoord_core::coupling::{assemble, CouplingSystem, VoltageLimits};
use evcoord_core::feeder::{
    build_sensitivity, Bases, BaselineSeries, FeederModel, LineSegment, Phase, PhaseSet,
    SensitivityMatrices,
};
use evcoord_core::fleet::{build_polytope, EvSpec};
use evcoord_core::problem::Problem;
use evcoord_core::thermal::{
    linearize, thermal_headroom, DisturbanceSeries, ThermalParams, ThermalResponse,
};

pub const DELTA_H: f64 = 0.5;

// Not every test binary touches every field.
#[allow(dead_code)]
pub struct Scenario {
    pub problem: Problem,
    pub sens: SensitivityMatrices,
    pub baseline: BaselineSeries,
    pub resp: ThermalResponse,
    pub dist: DisturbanceSeries,
    pub limits: VoltageLimits,
    pub theta0: f64,
    pub theta_max: f64,
    pub v_eff: f64,
}

pub fn default_ev(arrival: usize, departure: usize, soc_target: f64) -> EvSpec {
    EvSpec {
        arrival,
        departure,
        capacity_kwh: 10.0,
        soc_init: 0.4,
        soc_target,
        soc_min: 0.1,
        soc_max: 0.95,
        efficiency: 0.95,
        rate_min_kw: -3.0,
        rate_max_kw: 3.0,
        kappa: 0.05,
        supply_point: (1, Phase::A),
    }
}

/// Two-node single-phase feeder carrying every EV on the same supply point.
pub fn two_node_scenario(specs: Vec<EvSpec>, t: usize, band_percent: f64, price: Vec<f64>) -> Scenario {
    assert_eq!(price.len(), t);
    let bases = Bases {
        s_base_kva: 100.0,
        v_base_v: 230.0,
    };
    let line = LineSegment::new(
        0,
        1,
        PhaseSet::from_phases(&[Phase::A]),
        &[(Phase::A, Phase::A, 0.08, 0.05)],
    )
    .unwrap();
    let customers: Vec<(usize, Phase)> = specs.iter().map(|s| s.supply_point).collect();
    let feeder = FeederModel::new(&[0, 1], vec![line], &customers, 1.0, bases).unwrap();
    let sens = build_sensitivity(&feeder).unwrap();
    let baseline = BaselineSeries::new(&sens, vec![vec![8.0]; t], vec![vec![1.5]; t]).unwrap();
    let params = ThermalParams {
        heat_capacity: 1.8e5,
        heat_resistance: 0.02,
        coil_resistance: 1.0,
        delta_h: DELTA_H,
        theta_star: 500.0,
        theta_ambient_star: 300.0,
    };
    let resp = linearize(&params, t).unwrap();
    let dist = DisturbanceSeries::new(vec![300.0; t], vec![15.0; t]).unwrap();
    let theta0 = 350.0;
    let theta_max = 430.0;
    let v_eff = 0.23;
    let head = thermal_headroom(&resp, &dist, theta0, theta_max, v_eff).unwrap();
    let limits = VoltageLimits::from_band_percent(band_percent, 1.0, sens.n_supply_points()).unwrap();
    let coupling: Arc<CouplingSystem> =
        Arc::new(assemble(&sens, &baseline, &resp, &head, &limits).unwrap());
    let polytopes = specs
        .iter()
        .map(|s| build_polytope(s, t, DELTA_H).unwrap())
        .collect();
    let problem = Problem::new(specs, polytopes, price, DELTA_H, coupling).unwrap();
    Scenario {
        problem,
        sens,
        baseline,
        resp,
        dist,
        limits,
        theta0,
        theta_max,
        v_eff,
    }
}
