//! Study-case description: network, generator fleet and fault scenario.
//!
//! Every quantity held by [`NetworkCase`] is per-unit on the system MVA base.
//! Conversion from the units declared in a case file happens in
//! [`load_case`] / [`case_from_json`].

mod builtin;
mod schema;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use builtin::{builtin_case, replace_with_gfl, BuiltinCase, GflSettings};
pub use schema::{case_from_json, case_to_json, load_case, save_case, CaseFormat};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub index: usize,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Voltage magnitude set point for slack and PV buses (pu).
    pub v_setpoint: f64,
    /// Bus-level load, an alternative to [`Load`] entries (pu).
    pub p_load: f64,
    pub q_load: f64,
    /// Ideal voltage source of fixed magnitude and angle. Only allowed on the
    /// slack bus.
    pub infinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Distinguishes parallel circuits between the same pair of buses.
    pub circuit: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (pu).
    pub b_shunt: f64,
    /// Off-nominal turns ratio on the `from` side.
    pub tap: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn reference(&self) -> BranchRef {
        BranchRef {
            from: self.from_bus,
            to: self.to_bus,
            circuit: Some(self.circuit),
        }
    }

    pub fn matches(&self, r: &BranchRef) -> bool {
        let ends = (self.from_bus == r.from && self.to_bus == r.to)
            || (self.from_bus == r.to && self.to_bus == r.from);
        ends && r.circuit.is_none_or(|c| c == self.circuit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// Classical synchronous machine, system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMachineParams {
    pub bus: usize,
    pub h: f64,
    /// Damping, pu power per pu speed deviation.
    pub d: f64,
    pub xd_prime: f64,
    /// Scheduled electrical output used by the power flow (pu). Ignored on
    /// the slack bus, whose output results from the solution.
    pub p_gen: f64,
    /// Filled at initialization.
    pub p_mech: Option<f64>,
    /// Filled at initialization.
    pub e_prime_mag: Option<f64>,
    pub rated_mva: f64,
}

/// Grid-following converter with virtual inertia and PLL, system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GflParams {
    pub bus: usize,
    pub p_vs: f64,
    pub t_v: f64,
    pub t_p: f64,
    pub h_v: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub v_floor: f64,
    pub rated_mva: f64,
}

pub const DEFAULT_V_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub system_base_mva: f64,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub sync_machines: Vec<SyncMachineParams>,
    pub gfl_units: Vec<GflParams>,
}

impl NetworkCase {
    /// Synchronous angular frequency ω₀ (rad/s).
    pub fn frequency_base(&self) -> f64 {
        std::f64::consts::TAU * self.frequency_hz
    }

    pub fn bus_position(&self, index: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.index == index)
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    pub fn infinite_buses(&self) -> impl Iterator<Item = &Bus> {
        self.buses.iter().filter(|b| b.infinite)
    }

    /// Position of the one branch `r` names.
    pub fn find_branch(&self, r: &BranchRef) -> Result<usize> {
        let mut hits = self.branches.iter().enumerate().filter(|(_, b)| b.matches(r));
        let Some((k, _)) = hits.next() else {
            return Err(Error::UnknownBranch(r.to_string()));
        };
        match hits.count() {
            0 => Ok(k),
            more => Err(Error::AmbiguousBranch(r.to_string(), more + 1)),
        }
    }

    /// Total constant load at a bus, bus-level entries plus [`Load`] records.
    pub fn bus_load(&self, index: usize) -> (f64, f64) {
        let (mut p, mut q) = self
            .buses
            .iter()
            .find(|b| b.index == index)
            .map_or((0.0, 0.0), |b| (b.p_load, b.q_load));
        for l in self.loads.iter().filter(|l| l.bus == index) {
            p += l.p;
            q += l.q;
        }
        (p, q)
    }

    /// Returns `Err(InvalidCase)` unless [`validate_case`] reports nothing.
    pub fn validated(self) -> Result<Self> {
        let report = validate_case(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidCase(report))
        }
    }
}

/// Identifies a branch by its end buses and, optionally, circuit number.
/// Written `A-B` or `A-B#c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRef {
    pub from: usize,
    pub to: usize,
    pub circuit: Option<u32>,
}

impl BranchRef {
    pub fn new(from: usize, to: usize) -> Self {
        Self {
            from,
            to,
            circuit: None,
        }
    }
}

impl fmt::Display for BranchRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.circuit {
            Some(c) => write!(f, "{}-{}#{}", self.from, self.to, c),
            None => write!(f, "{}-{}", self.from, self.to),
        }
    }
}

impl FromStr for BranchRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("branch reference `{s}` is not of the form A-B or A-B#c"));
        let (ends, circuit) = match s.split_once('#') {
            Some((e, c)) => (e, Some(c.trim().parse::<u32>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let (a, b) = ends.split_once('-').ok_or_else(bad)?;
        Ok(Self {
            from: a.trim().parse().map_err(|_| bad())?,
            to: b.trim().parse().map_err(|_| bad())?,
            circuit,
        })
    }
}

/// Fault applied at `t1` and cleared `t_cl_delay` seconds later by tripping
/// `tripped_branch`. A scenario without a fault bus leaves the network
/// unchanged during the "fault"; without a tripped branch the post-fault
/// network equals the pre-fault one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub fault_bus: Option<usize>,
    pub tripped_branch: Option<BranchRef>,
    pub t1: f64,
    pub t_cl_delay: f64,
    pub horizon: f64,
    pub dt: f64,
}

pub const DEFAULT_T1: f64 = 5.0;
pub const DEFAULT_HORIZON: f64 = 15.0;
pub const DEFAULT_DT: f64 = 0.01;

impl FaultScenario {
    pub fn new(fault_bus: usize, tripped_branch: BranchRef, t_cl_delay: f64) -> Self {
        Self {
            fault_bus: Some(fault_bus),
            tripped_branch: Some(tripped_branch),
            t1: DEFAULT_T1,
            t_cl_delay,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        }
    }

    /// Scenario whose fault inception lies past the horizon.
    pub fn no_fault(horizon: f64, dt: f64) -> Self {
        Self {
            fault_bus: None,
            tripped_branch: None,
            t1: horizon + 1.0,
            t_cl_delay: 0.1,
            horizon,
            dt,
        }
    }

    pub fn with_clearing(&self, t_cl_delay: f64) -> Self {
        Self {
            t_cl_delay,
            ..self.clone()
        }
    }

    pub fn t_cl(&self) -> f64 {
        self.t1 + self.t_cl_delay
    }

    /// Number of integration steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn fault_step(&self) -> usize {
        (self.t1 / self.dt).round() as usize
    }

    pub fn clearing_step(&self) -> usize {
        self.fault_step() + (self.t_cl_delay / self.dt).round() as usize
    }

    /// Checks sign constraints and that every event lies on the step grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !positive(self.dt) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !positive(self.horizon) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !nonnegative(self.t1) {
            return bad(format!("t1 must be nonnegative, got {}", self.t1));
        }
        if !positive(self.t_cl_delay) {
            return bad(format!("clearing delay must be positive, got {}", self.t_cl_delay));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("t1", self.t1),
            ("clearing delay", self.t_cl_delay),
        ] {
            if !on_grid(v, self.dt) && !(name == "t1" && self.t1 >= self.horizon) {
                return bad(format!("{name} = {v} is not a multiple of dt = {}", self.dt));
            }
        }
        Ok(())
    }

    /// True when the clearing instant falls strictly inside the horizon.
    pub fn clears_within_horizon(&self) -> bool {
        self.clearing_step() < self.steps()
    }
}

pub(crate) fn on_grid(value: f64, dt: f64) -> bool {
    let n = (value / dt).round();
    (n * dt - value).abs() <= 1e-9 * value.abs().max(1.0)
}

/// False for NaN as well as for values at or below zero.
fn positive(v: f64) -> bool {
    v > 0.0
}

fn nonnegative(v: f64) -> bool {
    v >= 0.0
}

/// Snaps a duration onto the integration grid.
pub fn snap_to_grid(value: f64, dt: f64) -> f64 {
    (value / dt).round() * dt
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

/// Every invariant violated by a case; empty iff the case is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !positive(case.system_base_mva) {
        report.push("system.base_mva", "system base must be positive");
    }
    if !positive(case.frequency_hz) {
        report.push("system.frequency_hz", "nominal frequency must be positive");
    }

    let mut seen = std::collections::BTreeSet::new();
    for (i, b) in case.buses.iter().enumerate() {
        let loc = format!("buses[{i}] (bus {})", b.index);
        if b.index < 1 {
            report.push(&loc, "bus index must be at least 1");
        }
        if !seen.insert(b.index) {
            report.push(&loc, format!("duplicate bus index {}", b.index));
        }
        if matches!(b.kind, BusKind::Slack | BusKind::Pv) && !positive(b.v_setpoint) {
            report.push(&loc, "voltage set point must be positive");
        }
        if b.infinite && b.kind != BusKind::Slack {
            report.push(&loc, "an infinite bus must be the slack bus");
        }
    }
    let slack_count = case.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slack_count != 1 {
        report.push("buses", format!("exactly one slack bus required, found {slack_count}"));
    }
    let exists = |bus: usize| case.buses.iter().any(|b| b.index == bus);

    for (i, br) in case.branches.iter().enumerate() {
        let loc = format!("branches[{i}] ({}-{})", br.from_bus, br.to_bus);
        for end in [br.from_bus, br.to_bus] {
            if !exists(end) {
                report.push(&loc, format!("refers to nonexistent bus {end}"));
            }
        }
        if br.from_bus == br.to_bus {
            report.push(&loc, "branch connects a bus to itself");
        }
        if br.r == 0.0 && br.x == 0.0 {
            report.push(&loc, "series impedance must be nonzero");
        }
        if !positive(br.tap) {
            report.push(&loc, "tap ratio must be positive");
        }
    }
    for (i, a) in case.branches.iter().enumerate() {
        for b in &case.branches[i + 1..] {
            if a.matches(&b.reference()) {
                report.push(
                    format!("branches[{i}] ({}-{})", a.from_bus, a.to_bus),
                    format!("duplicate circuit number {}", a.circuit),
                );
            }
        }
    }

    for (i, l) in case.loads.iter().enumerate() {
        if !exists(l.bus) {
            report.push(format!("loads[{i}]"), format!("refers to nonexistent bus {}", l.bus));
        }
    }

    if case.sync_machines.is_empty() {
        report.push("sync_machines", "at least one synchronous machine is required");
    }
    for (i, m) in case.sync_machines.iter().enumerate() {
        let loc = format!("sync_machines[{i}] (bus {})", m.bus);
        if !exists(m.bus) {
            report.push(&loc, format!("refers to nonexistent bus {}", m.bus));
        }
        if !positive(m.h) {
            report.push(&loc, "inertia must be positive");
        }
        if !positive(m.xd_prime) {
            report.push(&loc, "transient reactance must be positive");
        }
        if !nonnegative(m.d) {
            report.push(&loc, "damping must be nonnegative");
        }
        if !positive(m.rated_mva) {
            report.push(&loc, "rated MVA must be positive");
        }
        if case.buses.iter().any(|b| b.index == m.bus && b.infinite) {
            report.push(&loc, "machine placed on an infinite bus");
        }
    }

    for (i, g) in case.gfl_units.iter().enumerate() {
        let loc = format!("gfl_units[{i}] (bus {})", g.bus);
        if !exists(g.bus) {
            report.push(&loc, format!("refers to nonexistent bus {}", g.bus));
        }
        if case.gfl_units[..i].iter().any(|o| o.bus == g.bus) {
            report.push(&loc, "more than one converter on the bus");
        }
        if case.buses.iter().any(|b| b.index == g.bus && b.kind == BusKind::Slack) {
            report.push(&loc, "converter placed on the slack bus");
        }
        if !positive(g.t_v) {
            report.push(&loc, "virtual-inertia time constant T_v must be positive");
        }
        if !positive(g.t_p) {
            report.push(&loc, "converter time constant T_p must be positive");
        }
        if !nonnegative(g.h_v) {
            report.push(&loc, "virtual inertia H_v must be nonnegative");
        }
        if !positive(g.k_p) {
            report.push(&loc, "PLL proportional gain must be positive");
        }
        if !positive(g.k_i) {
            report.push(&loc, "PLL integral gain must be positive");
        }
        if !(g.v_floor > 0.0 && g.v_floor <= 0.1) {
            report.push(&loc, "voltage floor must lie in (0, 0.1] pu");
        }
        if !positive(g.rated_mva) {
            report.push(&loc, "rated MVA must be positive");
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unnumbered_reference_to_parallel_lines_is_ambiguous() {
        let case = builtin_case("smib").unwrap();
        assert!(matches!(
            case.find_branch(&BranchRef::new(2, 1)),
            Err(Error::AmbiguousBranch(_, 2))
        ));
        assert_eq!(case.find_branch(&"2-1#2".parse().unwrap()).unwrap(), 1);
        assert!(matches!(
            case.find_branch(&BranchRef::new(1, 3)),
            Err(Error::UnknownBranch(_))
        ));
    }

    #[test]
    fn branch_ref_parses_both_forms() {
        let r: BranchRef = "2-3".parse().unwrap();
        assert_eq!(r, BranchRef::new(2, 3));
        let r: BranchRef = "1-2#2".parse().unwrap();
        assert_eq!(r.circuit, Some(2));
        assert_eq!(r.to_string(), "1-2#2");
        assert!("2_3".parse::<BranchRef>().is_err());
    }

    #[test]
    fn zero_inertia_is_one_violation() {
        let mut case = builtin_case("smib").unwrap();
        case.sync_machines[0].h = 0.0;
        let report = validate_case(&case);
        assert_eq!(report.len(), 1);
        assert_eq!(report.violations[0].message, "inertia must be positive");
    }

    #[test]
    fn two_slack_buses_is_one_violation() {
        let mut case = builtin_case("ieee39_sync").unwrap();
        let pos = case.bus_position(30).unwrap();
        case.buses[pos].kind = BusKind::Slack;
        let report = validate_case(&case);
        assert_eq!(report.len(), 1, "{report}");
        assert!(report.violations[0].message.contains("exactly one slack"));
    }

    #[test]
    fn dangling_branch_names_bus() {
        let mut case = builtin_case("smib").unwrap();
        case.branches[0].to_bus = 99;
        let report = validate_case(&case);
        assert!(report
            .violations
            .iter()
            .any(|v| v.location.starts_with("branches[0]") && v.message.contains("99")));
    }

    #[test]
    fn gfl_parameter_bounds() {
        let mut case = builtin_case("ieee39_gfl2").unwrap();
        case.gfl_units[0].t_v = 0.0;
        case.gfl_units[1].v_floor = 0.2;
        let report = validate_case(&case);
        assert_eq!(report.len(), 2, "{report}");
    }

    #[test]
    fn scenario_grid_checks() {
        let s = FaultScenario::new(2, BranchRef::new(2, 3), 0.41);
        s.validate().unwrap();
        assert_eq!(s.clearing_step() - s.fault_step(), 41);
        let bad = s.with_clearing(0.415);
        assert!(bad.validate().is_err());
        assert!(FaultScenario::no_fault(15.0, 0.01).validate().is_ok());
    }
}
