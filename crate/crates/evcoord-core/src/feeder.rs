//! Unbalanced radial distribution feeder and the linearized sensitivity of
//! squared supply-point voltages to customer real-power injections.
//!
//! The feeder is a rooted radial network whose nodes and lines may carry one,
//! two, or three phases. For a pair of supply points the shared-path
//! impedance is accumulated over the intersection of their root paths, then
//! rotated by the phase operator `ω = e^(-2πi/3)` to produce the real
//! sensitivity matrices `R` and `X` of the linearized (LinDistFlow) power
//! flow. Customer injections map through the incidence `Υ` into `D = -RΥ`.
//!
//! Impedances are accepted in ohms and loads in kW/kVAR; everything is
//! normalized internally against the declared power/voltage bases so that
//! voltages come out in per-unit squared.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Complex, Mat};

/// One phase of a three-phase system. Index order is (a, b, c) = (0, 1, 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

pub const ALL_PHASES: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn label(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_label(c: char) -> Option<Phase> {
        match c {
            'a' | 'A' => Some(Phase::A),
            'b' | 'B' => Some(Phase::B),
            'c' | 'C' => Some(Phase::C),
            _ => None,
        }
    }
}

/// Subset of the three phases, iterated in (a, b, c) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseSet {
    bits: u8,
}

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet { bits: 0b111 };

    pub fn empty() -> Self {
        PhaseSet { bits: 0 }
    }

    pub fn from_phases(phases: &[Phase]) -> Self {
        let mut s = PhaseSet::empty();
        for &p in phases {
            s.insert(p);
        }
        s
    }

    pub fn insert(&mut self, p: Phase) {
        self.bits |= 1 << p.index();
    }

    pub fn contains(&self, p: Phase) -> bool {
        self.bits & (1 << p.index()) != 0
    }

    pub fn is_subset_of(&self, other: &PhaseSet) -> bool {
        self.bits & !other.bits == 0
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Phase> + '_ {
        ALL_PHASES.into_iter().filter(|p| self.contains(*p))
    }
}

/// Power/voltage bases used to normalize physical units.
#[derive(Debug, Clone, Copy)]
pub struct Bases {
    /// Per-phase power base [kVA].
    pub s_base_kva: f64,
    /// Line-to-neutral rms voltage base [V].
    pub v_base_v: f64,
}

impl Bases {
    /// Impedance base [Ω] = V² / S.
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / (self.s_base_kva * 1000.0)
    }

    /// Scale factor turning 2·Re/Im sensitivity entries in ohms into
    /// per-unit-squared voltage per kW of injection.
    pub fn sensitivity_scale(&self) -> f64 {
        1.0 / (self.z_base_ohm() * self.s_base_kva)
    }
}

/// A line segment with per-phase-pair series impedance.
#[derive(Debug, Clone)]
pub struct LineSegment {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    // Symmetric 3x3 storage; entries outside `phases` stay None.
    z: [[Option<Complex>; 3]; 3],
}

impl LineSegment {
    /// Builds a line from `(phase, phase, r_ohm, x_ohm)` impedance entries.
    /// The map is stored symmetrically; duplicate conflicting entries and
    /// entries naming phases the line does not carry are rejected. Pairs the
    /// caller omits default to zero mutual coupling.
    pub fn new(
        from: usize,
        to: usize,
        phases: PhaseSet,
        entries: &[(Phase, Phase, f64, f64)],
    ) -> Result<Self, FeederError> {
        let mut z: [[Option<Complex>; 3]; 3] = Default::default();
        for &(p, q, r, x) in entries {
            if !phases.contains(p) || !phases.contains(q) {
                return Err(FeederError::ImpedancePhaseNotOnLine {
                    from,
                    to,
                    phase: if phases.contains(p) { q } else { p }.label(),
                });
            }
            let val = Complex::new(r, x);
            let (i, j) = (p.index(), q.index());
            for &(a, b) in &[(i, j), (j, i)] {
                match z[a][b] {
                    Some(existing) if existing != val => {
                        return Err(FeederError::AsymmetricImpedance { from, to });
                    }
                    _ => z[a][b] = Some(val),
                }
            }
        }
        Ok(LineSegment {
            from,
            to,
            phases,
            z,
        })
    }

    /// Series impedance for a phase pair; zero when the pair is absent.
    pub fn impedance(&self, p: Phase, q: Phase) -> Complex {
        self.z[p.index()][q.index()].unwrap_or(Complex::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeederError {
    #[error("node ids must include the root 0")]
    MissingRoot,
    #[error("line ({from},{to}) references unknown node {node}")]
    UnknownLineNode { from: usize, to: usize, node: usize },
    #[error("feeder is not radial: {detail}")]
    NotRadial { detail: String },
    #[error("line ({from},{to}) impedance names phase {phase} not on the line")]
    ImpedancePhaseNotOnLine { from: usize, to: usize, phase: char },
    #[error("line ({from},{to}) has conflicting impedance entries for a symmetric pair")]
    AsymmetricImpedance { from: usize, to: usize },
    #[error("line ({from},{to}) carries phase {phase} absent at its upstream node")]
    PhaseNotAtParent { from: usize, to: usize, phase: char },
    #[error("customer {customer} attaches to unknown supply point ({node}:{phase})")]
    UnknownSupplyPoint {
        customer: usize,
        node: usize,
        phase: char,
    },
    #[error("query names unknown node {node}")]
    QueryUnknownNode { node: usize },
    #[error("query names phase {phase} not present at node {node}")]
    QueryPhaseNotAtNode { node: usize, phase: char },
    #[error("baseline series step count {got} does not match horizon {expected}")]
    BaselineLength { got: usize, expected: usize },
    #[error("dimension mismatch: {detail}")]
    Dimension { detail: String },
}

/// Immutable multiphase radial feeder model.
///
/// Supply points are the (node, phase) pairs of all non-root nodes, ordered
/// by ascending node id with phases in (a, b, c) order within a node. That
/// ordering fixes every vector and matrix index downstream.
#[derive(Debug, Clone)]
pub struct FeederModel {
    node_ids: Vec<usize>,
    lines: Vec<LineSegment>,
    /// Parent line index per node position (root has none).
    parent_line: Vec<Option<usize>>,
    /// Phases present per node position.
    node_phases: Vec<PhaseSet>,
    /// Ordered supply points as (node id, phase).
    supply_points: Vec<(usize, Phase)>,
    /// Supply-point index for each customer (column of Υ).
    customer_sp: Vec<usize>,
    /// Squared nominal voltage at the root [p.u.²].
    pub v0: f64,
    pub bases: Bases,
}

impl FeederModel {
    pub fn new(
        node_ids: &[usize],
        lines: Vec<LineSegment>,
        customers: &[(usize, Phase)],
        v0: f64,
        bases: Bases,
    ) -> Result<Self, FeederError> {
        let mut ids: Vec<usize> = node_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.first() != Some(&0) {
            return Err(FeederError::MissingRoot);
        }
        let pos_of = |id: usize| ids.binary_search(&id).ok();
        if lines.len() != ids.len() - 1 {
            return Err(FeederError::NotRadial {
                detail: format!("{} lines for {} nodes", lines.len(), ids.len()),
            });
        }
        for line in &lines {
            for node in [line.from, line.to] {
                if pos_of(node).is_none() {
                    return Err(FeederError::UnknownLineNode {
                        from: line.from,
                        to: line.to,
                        node,
                    });
                }
            }
        }

        // BFS from the root; orient each line away from it and reject cycles
        // or disconnected nodes.
        let n = ids.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (li, line) in lines.iter().enumerate() {
            adjacency[pos_of(line.from).unwrap()].push(li);
            adjacency[pos_of(line.to).unwrap()].push(li);
        }
        let mut parent_line: Vec<Option<usize>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut lines = lines;
        visited[0] = true;
        let mut queue = vec![0usize];
        while let Some(pos) = queue.pop() {
            for &li in &adjacency[pos] {
                let (fp, tp) = (pos_of(lines[li].from).unwrap(), pos_of(lines[li].to).unwrap());
                let other = if fp == pos { tp } else { fp };
                if other == pos {
                    return Err(FeederError::NotRadial {
                        detail: format!("self-loop at node {}", ids[pos]),
                    });
                }
                if visited[other] {
                    if parent_line[pos] != Some(li) {
                        return Err(FeederError::NotRadial {
                            detail: format!("cycle through node {}", ids[other]),
                        });
                    }
                    continue;
                }
                visited[other] = true;
                parent_line[other] = Some(li);
                if fp != pos {
                    // store lines oriented root -> leaf
                    let l = &mut lines[li];
                    core::mem::swap(&mut l.from, &mut l.to);
                }
                queue.push(other);
            }
        }
        if let Some(pos) = visited.iter().position(|v| !v) {
            return Err(FeederError::NotRadial {
                detail: format!("node {} unreachable from the root", ids[pos]),
            });
        }

        // Phases at a node: root carries all three, every other node the
        // phases of its parent line. Validate top-down.
        let mut node_phases = vec![PhaseSet::empty(); n];
        node_phases[0] = PhaseSet::ABC;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&p| depth(p, &parent_line, &lines, &pos_of));
        for &pos in &order {
            let Some(li) = parent_line[pos] else { continue };
            let line = &lines[li];
            let parent_pos = pos_of(line.from).unwrap();
            if !line.phases.is_subset_of(&node_phases[parent_pos]) {
                let missing = line
                    .phases
                    .iter()
                    .find(|p| !node_phases[parent_pos].contains(*p))
                    .unwrap();
                return Err(FeederError::PhaseNotAtParent {
                    from: line.from,
                    to: line.to,
                    phase: missing.label(),
                });
            }
            node_phases[pos] = line.phases;
        }

        // Supply points: non-root nodes ascending, phases (a,b,c) within.
        let mut supply_points = Vec::new();
        for (pos, &id) in ids.iter().enumerate().skip(1) {
            for phase in node_phases[pos].iter() {
                supply_points.push((id, phase));
            }
        }

        let sp_index = |node: usize, phase: Phase| {
            supply_points
                .iter()
                .position(|&(k, p)| k == node && p == phase)
        };
        let mut customer_sp = Vec::with_capacity(customers.len());
        for (ci, &(node, phase)) in customers.iter().enumerate() {
            match sp_index(node, phase) {
                Some(idx) => customer_sp.push(idx),
                None => {
                    return Err(FeederError::UnknownSupplyPoint {
                        customer: ci,
                        node,
                        phase: phase.label(),
                    })
                }
            }
        }

        Ok(FeederModel {
            node_ids: ids,
            lines,
            parent_line,
            node_phases,
            supply_points,
            customer_sp,
            v0,
            bases,
        })
    }

    pub fn supply_points(&self) -> &[(usize, Phase)] {
        &self.supply_points
    }

    /// Number of supply points ϰ.
    pub fn n_supply_points(&self) -> usize {
        self.supply_points.len()
    }

    pub fn n_customers(&self) -> usize {
        self.customer_sp.len()
    }

    /// Supply-point index of a customer (the single nonzero row of its Υ column).
    pub fn customer_supply_point(&self, customer: usize) -> usize {
        self.customer_sp[customer]
    }

    pub fn supply_point_index(&self, node: usize, phase: Phase) -> Option<usize> {
        self.supply_points
            .iter()
            .position(|&(k, p)| k == node && p == phase)
    }

    fn node_pos(&self, id: usize) -> Option<usize> {
        self.node_ids.binary_search(&id).ok()
    }

    /// Line indices on the path from the root to `node` (order unspecified).
    fn root_path(&self, pos: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = pos;
        while let Some(li) = self.parent_line[cur] {
            path.push(li);
            cur = self.node_pos(self.lines[li].from).unwrap();
        }
        path
    }

    /// Shared-path impedance between supply points `(k: φ)` and `(k̂: φ̂)`:
    /// the sum of per-line `(φ, φ̂)` impedances over the intersection of the
    /// two root paths. Lines lacking the pair contribute zero.
    pub fn path_impedance(
        &self,
        k: usize,
        k_hat: usize,
        phase: Phase,
        phase_hat: Phase,
    ) -> Result<Complex, FeederError> {
        let pos = self
            .node_pos(k)
            .ok_or(FeederError::QueryUnknownNode { node: k })?;
        let pos_hat = self
            .node_pos(k_hat)
            .ok_or(FeederError::QueryUnknownNode { node: k_hat })?;
        if pos == 0 {
            return Err(FeederError::QueryUnknownNode { node: k });
        }
        if pos_hat == 0 {
            return Err(FeederError::QueryUnknownNode { node: k_hat });
        }
        if !self.node_phases[pos].contains(phase) {
            return Err(FeederError::QueryPhaseNotAtNode {
                node: k,
                phase: phase.label(),
            });
        }
        if !self.node_phases[pos_hat].contains(phase_hat) {
            return Err(FeederError::QueryPhaseNotAtNode {
                node: k_hat,
                phase: phase_hat.label(),
            });
        }
        let path = self.root_path(pos);
        let path_hat = self.root_path(pos_hat);
        let mut total = Complex::ZERO;
        for li in path {
            if path_hat.contains(&li) {
                total = total.add(self.lines[li].impedance(phase, phase_hat));
            }
        }
        Ok(total)
    }
}

fn depth(
    mut pos: usize,
    parent_line: &[Option<usize>],
    lines: &[LineSegment],
    pos_of: &impl Fn(usize) -> Option<usize>,
) -> usize {
    let mut d = 0;
    while let Some(li) = parent_line[pos] {
        pos = pos_of(lines[li].from).unwrap();
        d += 1;
    }
    d
}

/// Voltage sensitivity matrices of the linearized power flow, normalized so
/// that squared per-unit voltages respond to injections in kW/kVAR.
#[derive(Debug, Clone)]
pub struct SensitivityMatrices {
    /// ϰ×ϰ real-power sensitivity [p.u.²/kW].
    pub r: Mat,
    /// ϰ×ϰ reactive-power sensitivity [p.u.²/kVAR].
    pub x: Mat,
    /// Per-customer columns of D = -RΥ, each of length ϰ.
    pub d_cols: Vec<Vec<f64>>,
    pub v0: f64,
}

impl SensitivityMatrices {
    pub fn n_supply_points(&self) -> usize {
        self.r.rows()
    }
}

/// Builds `R`, `X`, and `D = -RΥ` for a feeder.
///
/// Entry formulas, with `𝒵` the shared-path impedance and `ω = e^(-2πi/3)`:
/// `[R] = 2·Re{𝒵* ω^(i_φ - i_φ̂)}`, `[X] = -2·Im{𝒵* ω^(i_φ - i_φ̂)}`.
pub fn build_sensitivity(feeder: &FeederModel) -> Result<SensitivityMatrices, FeederError> {
    let kappa = feeder.n_supply_points();
    let scale = feeder.bases.sensitivity_scale();
    let mut r = Mat::zeros(kappa, kappa);
    let mut x = Mat::zeros(kappa, kappa);
    for (i, &(k, phase)) in feeder.supply_points.iter().enumerate() {
        for (j, &(k_hat, phase_hat)) in feeder.supply_points.iter().enumerate() {
            let z = feeder.path_impedance(k, k_hat, phase, phase_hat)?;
            let rot = omega_power(phase.index() as i32 - phase_hat.index() as i32);
            let prod = z.conj().mul(rot);
            r[(i, j)] = 2.0 * prod.re * scale;
            x[(i, j)] = -2.0 * prod.im * scale;
        }
    }
    let d_cols = (0..feeder.n_customers())
        .map(|n| {
            let sp = feeder.customer_sp[n];
            (0..kappa).map(|i| -r[(i, sp)]).collect()
        })
        .collect();
    Ok(SensitivityMatrices {
        r,
        x,
        d_cols,
        v0: feeder.v0,
    })
}

/// ω^p with ω = e^(-2πi/3), evaluated exactly for integer p.
fn omega_power(p: i32) -> Complex {
    const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;
    match p.rem_euclid(3) {
        0 => Complex::new(1.0, 0.0),
        1 => Complex::new(-0.5, -HALF_SQRT3),
        _ => Complex::new(-0.5, HALF_SQRT3),
    }
}

/// Non-EV (baseline) load series and the squared voltages it induces.
#[derive(Debug, Clone)]
pub struct BaselineSeries {
    /// T×ϰ real power [kW].
    p_kw: Vec<Vec<f64>>,
    /// T×ϰ reactive power [kVAR].
    q_kvar: Vec<Vec<f64>>,
    /// Stacked ϰT squared baseline voltages [p.u.²].
    v_tilde: Vec<f64>,
}

impl BaselineSeries {
    /// Computes `Ṽ(t) = V⁰ − R P̃(t) − X Q̃(t)` for every step.
    pub fn new(
        sens: &SensitivityMatrices,
        p_kw: Vec<Vec<f64>>,
        q_kvar: Vec<Vec<f64>>,
    ) -> Result<Self, FeederError> {
        let kappa = sens.n_supply_points();
        if p_kw.len() != q_kvar.len() {
            return Err(FeederError::BaselineLength {
                got: q_kvar.len(),
                expected: p_kw.len(),
            });
        }
        for (t, (p, q)) in p_kw.iter().zip(&q_kvar).enumerate() {
            if p.len() != kappa || q.len() != kappa {
                return Err(FeederError::Dimension {
                    detail: format!("baseline step {t} has wrong supply-point count"),
                });
            }
        }
        let mut v_tilde = Vec::with_capacity(p_kw.len() * kappa);
        for (p, q) in p_kw.iter().zip(&q_kvar) {
            let rp = sens.r.matvec(p);
            let xq = sens.x.matvec(q);
            for i in 0..kappa {
                v_tilde.push(sens.v0 - rp[i] - xq[i]);
            }
        }
        Ok(BaselineSeries {
            p_kw,
            q_kvar,
            v_tilde,
        })
    }

    pub fn horizon(&self) -> usize {
        self.p_kw.len()
    }

    pub fn p_kw(&self, t: usize) -> &[f64] {
        &self.p_kw[t]
    }

    pub fn q_kvar(&self, t: usize) -> &[f64] {
        &self.q_kvar[t]
    }

    /// Stacked ϰT baseline squared voltages.
    pub fn v_tilde(&self) -> &[f64] {
        &self.v_tilde
    }
}

/// Squared voltages over the horizon with the fleet charging at `x_fleet`
/// (N×T, kW): `V(t) = Ṽ(t) + Σₙ Dₙ xₙ(t)`, stacked into a ϰT vector.
pub fn voltage_profile(
    sens: &SensitivityMatrices,
    baseline: &BaselineSeries,
    x_fleet: &[Vec<f64>],
) -> Result<Vec<f64>, FeederError> {
    let kappa = sens.n_supply_points();
    let horizon = baseline.horizon();
    if x_fleet.len() != sens.d_cols.len() {
        return Err(FeederError::Dimension {
            detail: format!(
                "{} charge profiles for {} customers",
                x_fleet.len(),
                sens.d_cols.len()
            ),
        });
    }
    for x in x_fleet {
        if x.len() != horizon {
            return Err(FeederError::Dimension {
                detail: format!("charge profile length {} for horizon {horizon}", x.len()),
            });
        }
    }
    let mut v = baseline.v_tilde.clone();
    for (x, d) in x_fleet.iter().zip(&sens.d_cols) {
        for t in 0..horizon {
            let xt = x[t];
            if xt != 0.0 {
                for i in 0..kappa {
                    v[t * kappa + i] += d[i] * xt;
                }
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bases_unit() -> Bases {
        // z_base = 1 Ω and s_base = 1 kVA make stored entries equal the raw
        // 2·Re/Im values, which keeps hand arithmetic transparent.
        Bases {
            s_base_kva: 1.0,
            v_base_v: 1000.0 / libm::sqrt(1000.0),
        }
    }

    fn single_line_feeder(r: f64, x: f64, phases: &[Phase]) -> FeederModel {
        let set = PhaseSet::from_phases(phases);
        let mut entries = Vec::new();
        for &p in phases {
            entries.push((p, p, r, x));
        }
        let line = LineSegment::new(0, 1, set, &entries).unwrap();
        FeederModel::new(&[0, 1], vec![line], &[(1, phases[0])], 1.0, bases_unit()).unwrap()
    }

    #[test]
    fn unit_bases_have_unit_scale() {
        let b = bases_unit();
        assert!((b.z_base_ohm() - 1.0).abs() < 1e-12);
        assert!((b.sensitivity_scale() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_impedance_single_line() {
        let feeder = single_line_feeder(0.1, 0.2, &[Phase::A]);
        let z = feeder.path_impedance(1, 1, Phase::A, Phase::A).unwrap();
        assert!((z.re - 0.1).abs() < 1e-15);
        assert!((z.im - 0.2).abs() < 1e-15);
    }

    #[test]
    fn path_impedance_disjoint_branches_is_zero() {
        // 0 -> 1 and 0 -> 2 share no line.
        let l1 = LineSegment::new(
            0,
            1,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.1, 0.1)],
        )
        .unwrap();
        let l2 = LineSegment::new(
            0,
            2,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.2, 0.3)],
        )
        .unwrap();
        let feeder =
            FeederModel::new(&[0, 1, 2], vec![l1, l2], &[], 1.0, bases_unit()).unwrap();
        let z = feeder.path_impedance(1, 2, Phase::A, Phase::A).unwrap();
        assert_eq!(z, Complex::ZERO);
    }

    #[test]
    fn path_impedance_chain_sums_shared_lines() {
        // Chain 0-1-2; both root paths of node 2 and node 2 include both
        // lines, so the expected sum was enumerated by hand:
        // z01 + z12 = (0.1+0.1i) + (0.2+0.1i) = 0.3+0.2i.
        let l1 = LineSegment::new(
            0,
            1,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.1, 0.1)],
        )
        .unwrap();
        let l2 = LineSegment::new(
            1,
            2,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.2, 0.1)],
        )
        .unwrap();
        let feeder =
            FeederModel::new(&[0, 1, 2], vec![l1, l2], &[], 1.0, bases_unit()).unwrap();
        let z = feeder.path_impedance(2, 2, Phase::A, Phase::A).unwrap();
        assert!((z.re - 0.3).abs() < 1e-15);
        assert!((z.im - 0.2).abs() < 1e-15);
    }

    #[test]
    fn path_impedance_rejects_bad_queries() {
        let feeder = single_line_feeder(0.1, 0.2, &[Phase::A]);
        assert!(matches!(
            feeder.path_impedance(7, 1, Phase::A, Phase::A),
            Err(FeederError::QueryUnknownNode { node: 7 })
        ));
        assert!(matches!(
            feeder.path_impedance(1, 1, Phase::B, Phase::A),
            Err(FeederError::QueryPhaseNotAtNode { node: 1, phase: 'b' })
        ));
    }

    #[test]
    fn sensitivity_same_phase_entries() {
        let (r, x) = (0.07, 0.31);
        let feeder = single_line_feeder(r, x, &[Phase::A]);
        let sens = build_sensitivity(&feeder).unwrap();
        assert!((sens.r[(0, 0)] - 2.0 * r).abs() < 1e-14);
        assert!((sens.x[(0, 0)] - 2.0 * x).abs() < 1e-14);
    }

    #[test]
    fn sensitivity_cross_phase_entry_matches_complex_oracle() {
        // Same line carrying phases a and b; cross entry (a,b) uses
        // ω^(0-1) = ω^(-1) = -1/2 + i√3/2.
        let (r, x) = (0.4, 0.25);
        let set = PhaseSet::from_phases(&[Phase::A, Phase::B]);
        let line = LineSegment::new(
            0,
            1,
            set,
            &[
                (Phase::A, Phase::A, r, x),
                (Phase::B, Phase::B, r, x),
                (Phase::A, Phase::B, r, x),
            ],
        )
        .unwrap();
        let feeder = FeederModel::new(
            &[0, 1],
            vec![line],
            &[(1, Phase::A)],
            1.0,
            bases_unit(),
        )
        .unwrap();
        let sens = build_sensitivity(&feeder).unwrap();
        let i_ab = (
            feeder.supply_point_index(1, Phase::A).unwrap(),
            feeder.supply_point_index(1, Phase::B).unwrap(),
        );
        // Oracle: full complex arithmetic evaluated independently.
        let z_conj = Complex::new(r, -x);
        let rot = Complex::new(-0.5, libm::sqrt(3.0) / 2.0);
        let prod = z_conj.mul(rot);
        assert!((sens.r[(i_ab.0, i_ab.1)] - 2.0 * prod.re).abs() < 1e-14);
        assert!((sens.x[(i_ab.0, i_ab.1)] + 2.0 * prod.im).abs() < 1e-14);
        // Closed form from the same arithmetic: 2Re{...} = -r + √3 x.
        assert!((sens.r[(i_ab.0, i_ab.1)] - (-r + libm::sqrt(3.0) * x)).abs() < 1e-12);
    }

    #[test]
    fn identity_incidence_gives_d_equals_minus_r() {
        // Two customers, one per supply point, on a two-node two-phase line.
        let set = PhaseSet::from_phases(&[Phase::A, Phase::B]);
        let line = LineSegment::new(
            0,
            1,
            set,
            &[
                (Phase::A, Phase::A, 0.3, 0.1),
                (Phase::B, Phase::B, 0.2, 0.4),
                (Phase::A, Phase::B, 0.05, 0.02),
            ],
        )
        .unwrap();
        let feeder = FeederModel::new(
            &[0, 1],
            vec![line],
            &[(1, Phase::A), (1, Phase::B)],
            1.0,
            bases_unit(),
        )
        .unwrap();
        let sens = build_sensitivity(&feeder).unwrap();
        for n in 0..2 {
            for i in 0..2 {
                assert_eq!(sens.d_cols[n][i], -sens.r[(i, n)]);
            }
        }
    }

    #[test]
    fn voltage_profile_zero_fleet_is_baseline() {
        let feeder = single_line_feeder(0.1, 0.2, &[Phase::A]);
        let sens = build_sensitivity(&feeder).unwrap();
        let baseline =
            BaselineSeries::new(&sens, vec![vec![1.0]; 3], vec![vec![0.5]; 3]).unwrap();
        let v = voltage_profile(&sens, &baseline, &[vec![0.0; 3]]).unwrap();
        assert_eq!(v, baseline.v_tilde().to_vec());
    }

    #[test]
    fn charging_lowers_voltage() {
        let feeder = single_line_feeder(0.1, 0.2, &[Phase::A]);
        let sens = build_sensitivity(&feeder).unwrap();
        let baseline =
            BaselineSeries::new(&sens, vec![vec![1.0]; 2], vec![vec![0.0]; 2]).unwrap();
        let v = voltage_profile(&sens, &baseline, &[vec![2.0, 0.0]]).unwrap();
        assert!(v[0] < baseline.v_tilde()[0]);
        assert_eq!(v[1], baseline.v_tilde()[1]);
    }

    #[test]
    fn incremental_matches_direct_small_instance() {
        // 2 supply points, 2 EVs, T = 1, checked against a direct
        // evaluation of V = V0 - R(P̃ + Υ𝒳) - X Q̃ assembled by hand.
        let set = PhaseSet::from_phases(&[Phase::A, Phase::B]);
        let line = LineSegment::new(
            0,
            1,
            set,
            &[
                (Phase::A, Phase::A, 0.3, 0.1),
                (Phase::B, Phase::B, 0.2, 0.4),
                (Phase::A, Phase::B, 0.05, 0.02),
            ],
        )
        .unwrap();
        let feeder = FeederModel::new(
            &[0, 1],
            vec![line],
            &[(1, Phase::A), (1, Phase::B)],
            1.0,
            bases_unit(),
        )
        .unwrap();
        let sens = build_sensitivity(&feeder).unwrap();
        let p = vec![vec![1.5, 0.7]];
        let q = vec![vec![0.3, 0.2]];
        let baseline = BaselineSeries::new(&sens, p.clone(), q.clone()).unwrap();
        let x_fleet = vec![vec![2.0], vec![-1.0]];
        let v = voltage_profile(&sens, &baseline, &x_fleet).unwrap();

        // Direct route: add EV injections into supply-point power first.
        let mut p_tot = p[0].clone();
        p_tot[0] += x_fleet[0][0];
        p_tot[1] += x_fleet[1][0];
        let rp = sens.r.matvec(&p_tot);
        let xq = sens.x.matvec(&q[0]);
        for i in 0..2 {
            let direct = sens.v0 - rp[i] - xq[i];
            assert!((v[i] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_cycles_and_disconnected() {
        let mk = |from, to| {
            LineSegment::new(
                from,
                to,
                PhaseSet::from_phases(&[Phase::A]),
                &[(Phase::A, Phase::A, 0.1, 0.1)],
            )
            .unwrap()
        };
        // 3 nodes, 3 lines: cycle.
        let err = FeederModel::new(
            &[0, 1, 2],
            vec![mk(0, 1), mk(1, 2), mk(2, 0)],
            &[],
            1.0,
            bases_unit(),
        )
        .unwrap_err();
        assert!(matches!(err, FeederError::NotRadial { .. }));
        // 4 nodes but a line count mismatch.
        let err = FeederModel::new(&[0, 1, 2, 3], vec![mk(0, 1), mk(1, 2)], &[], 1.0, bases_unit())
            .unwrap_err();
        assert!(matches!(err, FeederError::NotRadial { .. }));
    }

    #[test]
    fn rejects_phase_not_at_parent() {
        let l1 = LineSegment::new(
            0,
            1,
            PhaseSet::from_phases(&[Phase::A]),
            &[(Phase::A, Phase::A, 0.1, 0.1)],
        )
        .unwrap();
        let l2 = LineSegment::new(
            1,
            2,
            PhaseSet::from_phases(&[Phase::B]),
            &[(Phase::B, Phase::B, 0.1, 0.1)],
        )
        .unwrap();
        let err = FeederModel::new(&[0, 1, 2], vec![l1, l2], &[], 1.0, bases_unit()).unwrap_err();
        assert!(matches!(err, FeederError::PhaseNotAtParent { .. }));
    }
}
