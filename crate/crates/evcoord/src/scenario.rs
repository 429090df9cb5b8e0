//! Scenario bundle: the JSON schema, the CSV data files it references, and
//! assembly into core problem objects. File paths inside a scenario resolve
//! relative to the scenario file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use evcoord_core::commnet::{CommGraph, FailureModel};
use evcoord_core::coupling::{assemble, CouplingSystem, VoltageLimits};
use evcoord_core::engine::AdmmOptions;
use evcoord_core::feeder::{
    build_sensitivity, Bases, BaselineSeries, FeederModel, LineSegment, Phase, PhaseSet,
    SensitivityMatrices,
};
use evcoord_core::fleet::{build_polytope, EvSpec};
use evcoord_core::localqp::LocalQpOptions;
use evcoord_core::problem::Problem;
use evcoord_core::thermal::{
    linearize, thermal_headroom, DisturbanceSeries, ThermalParams, ThermalResponse,
};

/// Which constraint set the run enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSelector {
    /// Cost minimization under battery constraints only.
    PriceBased,
    /// The full coordination problem with network constraints.
    NetworkAware,
}

impl CaseSelector {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "price" | "price_based" => Ok(CaseSelector::PriceBased),
            "network" | "network_aware" => Ok(CaseSelector::NetworkAware),
            other => bail!("unknown case {other:?} (expected price|network)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonBlock {
    /// Number of steps T.
    pub steps: usize,
    /// Step length Δ [h].
    pub delta_h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalBlock {
    pub heat_capacity_j_per_k: f64,
    pub heat_resistance_k_per_w: f64,
    pub coil_resistance_ohm: f64,
    pub theta_star_k: f64,
    pub theta_ambient_star_k: f64,
    pub theta0_k: f64,
    pub v_rms_v: f64,
    pub disturbance_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitsBlock {
    pub voltage_band_percent: f64,
    /// Absolute core-temperature bound [K].
    pub theta_max_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphBlock {
    /// Explicit edge list CSV; wins over the random generator when present.
    #[serde(default)]
    pub edge_file: Option<String>,
    /// Erdős–Rényi edge probability.
    #[serde(default)]
    pub edge_prob: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_max_tries")]
    pub max_tries: usize,
}

fn default_max_tries() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmBlock {
    pub rho: f64,
    pub max_iter: u64,
    #[serde(default = "default_eps")]
    pub eps_dual: f64,
    #[serde(default = "default_eps")]
    pub eps_primal: f64,
    #[serde(default = "default_true")]
    pub row_scaling: bool,
    /// Subproblem stationarity tolerance.
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    /// Subproblem iteration cap. The library default (50·(2T+2ϰT)) is sized
    /// for warm-started solves; driver runs use a generous cap so a single
    /// slow cold start cannot abort a long coordination run.
    #[serde(default = "default_inner_max_iter")]
    pub inner_max_iter: usize,
}

fn default_inner_max_iter() -> usize {
    200_000
}

fn default_eps() -> f64 {
    1e-6
}

fn default_true() -> bool {
    true
}

fn default_inner_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureBlock {
    /// Uniform agent-activity probability α̂ ∈ (0, 1].
    pub alpha_hat: f64,
    /// Uniform link message-failure probability ᾱ ∈ [0, 1].
    pub alpha_bar: f64,
    /// Per-agent overrides (length N) when non-uniform.
    #[serde(default)]
    pub alpha_hat_per_agent: Option<Vec<f64>>,
    /// Per-edge overrides (canonical edge order) when non-uniform.
    #[serde(default)]
    pub alpha_bar_per_edge: Option<Vec<f64>>,
}

/// The scenario JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub horizon: HorizonBlock,
    pub feeder_file: String,
    pub fleet_file: String,
    pub price_file: String,
    pub baseline_file: String,
    pub thermal: ThermalBlock,
    pub limits: LimitsBlock,
    pub graph: GraphBlock,
    pub admm: AdmmBlock,
    pub failure: FailureBlock,
    pub seed: u64,
    pub case: CaseSelector,
}

/// Feeder description JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFile {
    /// Squared nominal voltage at the feeder head [p.u.²].
    pub v0_pu2: f64,
    pub bases: BasesBlock,
    pub nodes: Vec<usize>,
    pub lines: Vec<LineEntry>,
    /// Optional customer echo, cross-checked against the fleet CSV.
    #[serde(default)]
    pub customers: Option<Vec<CustomerEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasesBlock {
    /// Per-phase power base [kVA].
    pub s_base_kva: f64,
    /// Line-to-neutral voltage base [V].
    pub v_base_v: f64,
    /// Watts per power unit of the fleet profiles (1000 for kW).
    #[serde(default = "default_w_per_kw")]
    pub w_per_kw: f64,
}

fn default_w_per_kw() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    /// Phases on the line, e.g. "abc" or "a".
    pub phases: String,
    pub impedance: Vec<ImpedanceEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpedanceEntry {
    /// Phase pair, e.g. "aa" or "ab".
    pub pair: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomerEntry {
    pub ev_id: usize,
    pub node: usize,
    pub phase: String,
}

/// Fully assembled scenario: core objects plus the physical-side data needed
/// to turn solutions into voltage/temperature profiles.
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub dir: PathBuf,
    pub problem: Problem,
    pub graph: CommGraph,
    pub failure: FailureModel,
    pub admm: AdmmOptions,
    pub feeder: FeederModel,
    pub sens: SensitivityMatrices,
    pub baseline: BaselineSeries,
    pub resp: ThermalResponse,
    pub dist: DisturbanceSeries,
    pub limits: VoltageLimits,
    pub theta0: f64,
    pub theta_max: f64,
    /// v_rms / w_per_kw: kW-to-ampere conversion of the thermal coupling.
    pub v_eff: f64,
    /// Attempts the random graph generator needed (None for explicit graphs).
    pub er_attempts: Option<usize>,
    /// EV ids in fleet-file order (agent index -> id).
    pub ev_ids: Vec<usize>,
}

impl LoadedScenario {
    pub fn n_agents(&self) -> usize {
        self.problem.n_agents()
    }

    pub fn horizon(&self) -> usize {
        self.problem.horizon()
    }

    pub fn delta_h(&self) -> f64 {
        self.file.horizon.delta_h
    }
}

fn parse_phase(s: &str) -> Result<Phase> {
    let mut chars = s.chars();
    match (chars.next().and_then(Phase::from_label), chars.next()) {
        (Some(p), None) => Ok(p),
        _ => bail!("invalid phase {s:?} (expected a, b, or c)"),
    }
}

fn parse_phase_set(s: &str) -> Result<PhaseSet> {
    let mut set = PhaseSet::empty();
    for c in s.chars() {
        set.insert(Phase::from_label(c).ok_or_else(|| anyhow!("invalid phase letter {c:?}"))?);
    }
    if set.is_empty() {
        bail!("empty phase set");
    }
    Ok(set)
}

/// Parses a supply-point label of the form "node:phase", e.g. "2:a".
pub fn parse_supply_point(s: &str) -> Result<(usize, Phase)> {
    let (node, phase) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("supply point {s:?} is not of the form node:phase"))?;
    Ok((
        node.trim().parse().context("supply point node id")?,
        parse_phase(phase.trim())?,
    ))
}

/// Formats a supply point as "node:phase".
pub fn supply_point_label(node: usize, phase: Phase) -> String {
    format!("{}:{}", node, phase.label())
}

#[derive(Debug, Deserialize)]
struct FleetRow {
    ev_id: usize,
    supply_point: String,
    arrival_idx: usize,
    departure_idx: usize,
    capacity_kwh: f64,
    soc0: f64,
    soc_target: f64,
    soc_min: f64,
    soc_max: f64,
    eff: f64,
    x_min_kw: f64,
    x_max_kw: f64,
    kappa: f64,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    time_index: usize,
    price_per_kwh: f64,
}

#[derive(Debug, Deserialize)]
struct BaselineRow {
    time_index: usize,
    supply_point_id: String,
    p_kw: f64,
    q_kvar: f64,
}

#[derive(Debug, Deserialize)]
#[allow(non_snake_case)]
struct DisturbanceRow {
    time_index: usize,
    theta_a_K: f64,
    i_d_A: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    from: usize,
    to: usize,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(rows)
}

fn load_feeder(path: &Path, fleet: &[FleetRow]) -> Result<(FeederModel, f64)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: FeederFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut lines = Vec::with_capacity(file.lines.len());
    for entry in &file.lines {
        let phases = parse_phase_set(&entry.phases)
            .with_context(|| format!("line ({},{})", entry.from, entry.to))?;
        let mut entries = Vec::with_capacity(entry.impedance.len());
        for imp in &entry.impedance {
            let pair: Vec<char> = imp.pair.chars().collect();
            if pair.len() != 2 {
                bail!("impedance pair {:?} must name two phases", imp.pair);
            }
            let p = Phase::from_label(pair[0])
                .ok_or_else(|| anyhow!("bad phase {:?}", pair[0]))?;
            let q = Phase::from_label(pair[1])
                .ok_or_else(|| anyhow!("bad phase {:?}", pair[1]))?;
            entries.push((p, q, imp.r_ohm, imp.x_ohm));
        }
        lines.push(LineSegment::new(entry.from, entry.to, phases, &entries)?);
    }
    let customers: Vec<(usize, Phase)> = fleet
        .iter()
        .map(|row| parse_supply_point(&row.supply_point))
        .collect::<Result<_>>()?;
    // Optional echo in the feeder file must agree with the fleet CSV.
    if let Some(echo) = &file.customers {
        if echo.len() != fleet.len() {
            bail!(
                "feeder file lists {} customers, fleet file has {}",
                echo.len(),
                fleet.len()
            );
        }
        for entry in echo {
            let agent = fleet
                .iter()
                .position(|row| row.ev_id == entry.ev_id)
                .ok_or_else(|| anyhow!("feeder customer ev_id {} not in fleet", entry.ev_id))?;
            let expected = (entry.node, parse_phase(&entry.phase)?);
            if customers[agent] != expected {
                bail!(
                    "feeder file puts ev {} at {}:{}, fleet file at {}",
                    entry.ev_id,
                    entry.node,
                    entry.phase,
                    fleet[agent].supply_point
                );
            }
        }
    }
    let bases = Bases {
        s_base_kva: file.bases.s_base_kva,
        v_base_v: file.bases.v_base_v,
    };
    let feeder = FeederModel::new(&file.nodes, lines, &customers, file.v0_pu2, bases)?;
    Ok((feeder, file.bases.w_per_kw))
}

/// Indexed series loader: every (time step, key) cell must be present
/// exactly once.
fn series_from_rows<K: Ord + Clone + std::fmt::Debug>(
    rows: Vec<(usize, K, f64, f64)>,
    t: usize,
    keys: &[K],
    what: &str,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let index: BTreeMap<K, usize> = keys
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    let mut a = vec![vec![f64::NAN; keys.len()]; t];
    let mut b = vec![vec![f64::NAN; keys.len()]; t];
    for (step, key, va, vb) in rows {
        let col = *index
            .get(&key)
            .ok_or_else(|| anyhow!("{what}: unknown key {key:?}"))?;
        if step >= t {
            bail!("{what}: time_index {step} outside horizon 0..{t}");
        }
        if !a[step][col].is_nan() {
            bail!("{what}: duplicate entry for step {step}, key {key:?}");
        }
        a[step][col] = va;
        b[step][col] = vb;
    }
    for (step, row) in a.iter().enumerate() {
        if let Some(col) = row.iter().position(|v| v.is_nan()) {
            bail!("{what}: missing entry for step {step}, key {:?}", keys[col]);
        }
    }
    Ok((a, b))
}

/// Loads and validates a scenario bundle.
pub fn load(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: ScenarioFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let resolve = |rel: &str| dir.join(rel);

    let t = file.horizon.steps;
    let delta_h = file.horizon.delta_h;
    if t == 0 || delta_h <= 0.0 {
        bail!("horizon must have steps > 0 and delta_h > 0");
    }

    // Fleet.
    let fleet_rows: Vec<FleetRow> = read_csv(&resolve(&file.fleet_file))?;
    if fleet_rows.is_empty() {
        bail!("fleet file {} is empty", file.fleet_file);
    }
    let ev_ids: Vec<usize> = fleet_rows.iter().map(|r| r.ev_id).collect();
    {
        let mut sorted = ev_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ev_ids.len() {
            bail!("duplicate ev_id in fleet file");
        }
    }

    // Feeder + sensitivities.
    let (feeder, w_per_kw) = load_feeder(&resolve(&file.feeder_file), &fleet_rows)?;
    let sens = build_sensitivity(&feeder)?;
    let kappa = feeder.n_supply_points();

    // EV specs and polytopes.
    let mut specs = Vec::with_capacity(fleet_rows.len());
    for row in &fleet_rows {
        let supply_point = parse_supply_point(&row.supply_point)?;
        let spec = EvSpec {
            arrival: row.arrival_idx,
            departure: row.departure_idx,
            capacity_kwh: row.capacity_kwh,
            soc_init: row.soc0,
            soc_target: row.soc_target,
            soc_min: row.soc_min,
            soc_max: row.soc_max,
            efficiency: row.eff,
            rate_min_kw: row.x_min_kw,
            rate_max_kw: row.x_max_kw,
            kappa: row.kappa,
            supply_point,
        };
        if spec.kappa <= 0.0 {
            bail!("ev {}: kappa must be positive", row.ev_id);
        }
        if spec.arrival >= spec.departure {
            bail!("ev {}: empty plug-in window ({}, {}]", row.ev_id, spec.arrival, spec.departure);
        }
        spec.validate(t)
            .with_context(|| format!("ev {}", row.ev_id))?;
        specs.push(spec);
    }
    let polytopes = specs
        .iter()
        .zip(&ev_ids)
        .map(|(spec, id)| {
            build_polytope(spec, t, delta_h).with_context(|| format!("ev {id} infeasible"))
        })
        .collect::<Result<Vec<_>>>()?;

    // Price.
    let price_rows: Vec<PriceRow> = read_csv(&resolve(&file.price_file))?;
    let mut price = vec![f64::NAN; t];
    for row in price_rows {
        if row.time_index >= t {
            bail!("price: time_index {} outside horizon", row.time_index);
        }
        if !price[row.time_index].is_nan() {
            bail!("price: duplicate time_index {}", row.time_index);
        }
        price[row.time_index] = row.price_per_kwh;
    }
    if let Some(step) = price.iter().position(|v| v.is_nan()) {
        bail!("price: missing step {step}");
    }

    // Baseline series per supply point.
    let sp_labels: Vec<String> = feeder
        .supply_points()
        .iter()
        .map(|&(node, phase)| supply_point_label(node, phase))
        .collect();
    let baseline_rows: Vec<BaselineRow> = read_csv(&resolve(&file.baseline_file))?;
    let (p_kw, q_kvar) = series_from_rows(
        baseline_rows
            .into_iter()
            .map(|r| (r.time_index, r.supply_point_id, r.p_kw, r.q_kvar))
            .collect(),
        t,
        &sp_labels,
        "baseline",
    )?;
    let baseline = BaselineSeries::new(&sens, p_kw, q_kvar)?;

    // Thermal response, disturbances, headroom.
    let params = ThermalParams {
        heat_capacity: file.thermal.heat_capacity_j_per_k,
        heat_resistance: file.thermal.heat_resistance_k_per_w,
        coil_resistance: file.thermal.coil_resistance_ohm,
        delta_h,
        theta_star: file.thermal.theta_star_k,
        theta_ambient_star: file.thermal.theta_ambient_star_k,
    };
    let resp = linearize(&params, t)?;
    let dist_rows: Vec<DisturbanceRow> = read_csv(&resolve(&file.thermal.disturbance_file))?;
    let mut theta_a = vec![f64::NAN; t];
    let mut i_d = vec![f64::NAN; t];
    for row in dist_rows {
        if row.time_index >= t {
            bail!("disturbance: time_index {} outside horizon", row.time_index);
        }
        theta_a[row.time_index] = row.theta_a_K;
        i_d[row.time_index] = row.i_d_A;
    }
    if theta_a.iter().chain(i_d.iter()).any(|v| v.is_nan()) {
        bail!("disturbance series incomplete");
    }
    let dist = DisturbanceSeries::new(theta_a, i_d)?;
    let v_eff = file.thermal.v_rms_v / w_per_kw;
    let theta0 = file.thermal.theta0_k;
    let theta_max = file.limits.theta_max_k;
    let head = thermal_headroom(&resp, &dist, theta0, theta_max, v_eff)?;

    // Voltage limits and the coupled constraint.
    let limits =
        VoltageLimits::from_band_percent(file.limits.voltage_band_percent, feeder.v0, kappa)?;
    let coupling: Arc<CouplingSystem> =
        Arc::new(assemble(&sens, &baseline, &resp, &head, &limits)?);

    let problem = Problem::new(specs, polytopes, price, delta_h, coupling)?;

    // Communication graph.
    let n = problem.n_agents();
    let (graph, er_attempts) = if let Some(edge_file) = &file.graph.edge_file {
        let rows: Vec<EdgeRow> = read_csv(&resolve(edge_file))?;
        let edges: Vec<(usize, usize)> = rows.into_iter().map(|r| (r.from, r.to)).collect();
        (CommGraph::new(n, &edges)?, None)
    } else {
        let p = file
            .graph
            .edge_prob
            .ok_or_else(|| anyhow!("graph block needs edge_file or edge_prob"))?;
        let seed = file.graph.seed.unwrap_or(file.seed);
        let (graph, attempts) = CommGraph::erdos_renyi(n, p, seed, file.graph.max_tries)?;
        (graph, Some(attempts))
    };

    // Failure model.
    let mut failure = FailureModel::uniform(
        &graph,
        file.failure.alpha_hat,
        file.failure.alpha_bar,
        file.seed,
    )?;
    if let Some(per_agent) = &file.failure.alpha_hat_per_agent {
        failure.alpha_hat = per_agent.clone();
    }
    if let Some(per_edge) = &file.failure.alpha_bar_per_edge {
        failure.alpha_bar = per_edge.clone();
    }
    failure.validate(&graph)?;

    let admm = AdmmOptions {
        rho: file.admm.rho,
        max_iter: file.admm.max_iter,
        eps_dual: file.admm.eps_dual,
        eps_primal: file.admm.eps_primal,
        row_scaling: file.admm.row_scaling,
        inner: LocalQpOptions {
            tol: file.admm.inner_tol,
            max_iter: Some(file.admm.inner_max_iter),
            ..Default::default()
        },
    };

    Ok(LoadedScenario {
        file,
        dir,
        problem,
        graph,
        failure,
        admm,
        feeder,
        sens,
        baseline,
        resp,
        dist,
        limits,
        theta0,
        theta_max,
        v_eff,
        er_attempts,
        ev_ids,
    })
}
