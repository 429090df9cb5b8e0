//! Result emission: per-iteration trace CSV (append-only, flushed per row so
//! a crashed run remains inspectable), solution profile CSV, violation
//! listings, and the run-metadata JSON echo.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use evcoord_core::coupling::{RowKind, Violation};
use evcoord_core::engine::RoundRecord;
use evcoord_core::feeder::voltage_profile;
use evcoord_core::fleet::{operational_cost, soc_profile};
use evcoord_core::thermal::temperature_profile;

use crate::scenario::{supply_point_label, LoadedScenario};

/// Streaming trace writer with one flush per iteration.
pub struct TraceWriter {
    out: BufWriter<File>,
    pub path: PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(
            out,
            "iteration,objective,error,dual_gap,primal_residual,n_active"
        )?;
        out.flush()?;
        Ok(TraceWriter {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn record(&mut self, rec: &RoundRecord) -> Result<()> {
        let error = match rec.error {
            Some(e) => format!("{e}"),
            None => String::new(),
        };
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            rec.iteration, rec.objective, error, rec.dual_gap, rec.primal_residual, rec.n_active
        )?;
        self.out.flush()?;
        Ok(())
    }
}

/// Physical trajectories of one solution.
pub struct SolutionProfiles {
    /// Voltage magnitude √v per supply point [p.u.], T×ϰ.
    pub voltage_magnitude: Vec<Vec<f64>>,
    /// Core temperature [K], length T.
    pub theta: Vec<f64>,
    /// Per-EV SoC trajectories, N×T.
    pub soc: Vec<Vec<f64>>,
    /// Per-EV operational cost [$].
    pub cost: Vec<f64>,
}

/// Evaluates the feeder and transformer response to a fleet solution.
pub fn solution_profiles(scenario: &LoadedScenario, x_fleet: &[Vec<f64>]) -> Result<SolutionProfiles> {
    let kappa = scenario.sens.n_supply_points();
    let t = scenario.horizon();
    let v = voltage_profile(&scenario.sens, &scenario.baseline, x_fleet)?;
    let voltage_magnitude = (0..t)
        .map(|step| {
            (0..kappa)
                .map(|j| v[step * kappa + j].max(0.0).sqrt())
                .collect()
        })
        .collect();
    let mut current = scenario.dist.current.clone();
    for x in x_fleet {
        for (c, xt) in current.iter_mut().zip(x) {
            *c += xt / scenario.v_eff;
        }
    }
    let theta = temperature_profile(&scenario.resp, &scenario.dist, scenario.theta0, &current)?;
    let soc = scenario
        .problem
        .specs
        .iter()
        .zip(x_fleet)
        .map(|(spec, x)| soc_profile(spec, x, scenario.delta_h()))
        .collect();
    let cost = scenario
        .problem
        .specs
        .iter()
        .zip(x_fleet)
        .map(|(spec, x)| operational_cost(spec, &scenario.problem.price, x, scenario.delta_h()))
        .collect();
    Ok(SolutionProfiles {
        voltage_magnitude,
        theta,
        soc,
        cost,
    })
}

/// Writes profiles as long-format CSV: time_index, series_id, value.
/// Series ids: `v:<node>:<phase>` (p.u. magnitude), `theta` (K),
/// `x:<ev_id>` (kW), `soc:<ev_id>`.
pub fn write_profiles(
    path: &Path,
    scenario: &LoadedScenario,
    x_fleet: &[Vec<f64>],
    profiles: &SolutionProfiles,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "time_index,series_id,value")?;
    let t = scenario.horizon();
    for step in 0..t {
        for (j, &(node, phase)) in scenario.feeder.supply_points().iter().enumerate() {
            writeln!(
                out,
                "{step},v:{},{}",
                supply_point_label(node, phase),
                profiles.voltage_magnitude[step][j]
            )?;
        }
        writeln!(out, "{step},theta,{}", profiles.theta[step])?;
        for (agent, x) in x_fleet.iter().enumerate() {
            writeln!(out, "{step},x:{},{}", scenario.ev_ids[agent], x[step])?;
            writeln!(
                out,
                "{step},soc:{},{}",
                scenario.ev_ids[agent], profiles.soc[agent][step]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a violation listing CSV: kind, supply_point, time_index, slack.
pub fn write_violations(
    path: &Path,
    scenario: &LoadedScenario,
    violations: &[Violation],
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "kind,supply_point,time_index,slack")?;
    for v in violations {
        let kind = match v.kind {
            RowKind::Thermal => "thermal",
            RowKind::UpperVoltage => "upper_voltage",
            RowKind::LowerVoltage => "lower_voltage",
        };
        let sp = match v.supply_point {
            Some(j) => {
                let (node, phase) = scenario.feeder.supply_points()[j];
                supply_point_label(node, phase)
            }
            None => "thermal".to_string(),
        };
        writeln!(out, "{kind},{sp},{},{}", v.step, v.slack)?;
    }
    out.flush()?;
    Ok(())
}

/// Serializes any metadata document as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
