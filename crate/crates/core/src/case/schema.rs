//! JSON case document.
//!
//! Each section carries a `units` object next to its `items`, so a file can
//! state powers in MW or pu and machine parameters on the machine or the
//! system base. [`save_case`] always writes pu on the system base, which makes
//! `load → save → load` exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Branch, Bus, BusKind, GflParams, Load, NetworkCase, SyncMachineParams, DEFAULT_V_FLOOR,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerUnit {
    #[default]
    #[serde(rename = "MW")]
    Mw,
    #[serde(rename = "pu")]
    Pu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterBase {
    #[default]
    Machine,
    System,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    system: SystemSection,
    buses: Section<PowerUnits, BusItem>,
    branches: Section<ImpedanceUnits, BranchItem>,
    #[serde(default)]
    loads: Section<PowerUnits, LoadItem>,
    sync_machines: Section<DeviceUnits, SyncItem>,
    #[serde(default)]
    gfl_units: Section<DeviceUnits, GflItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    #[serde(default)]
    name: String,
    base_mva: f64,
    frequency_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Section<U, I> {
    #[serde(default)]
    units: U,
    #[serde(default = "Vec::new")]
    items: Vec<I>,
}

impl<U: Default, I> Default for Section<U, I> {
    fn default() -> Self {
        Self {
            units: U::default(),
            items: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerUnits {
    #[serde(default)]
    power: PowerUnit,
}

/// Branch data are always pu on the system base; the field exists so the
/// document states it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImpedanceUnits {
    impedance: String,
}

impl Default for ImpedanceUnits {
    fn default() -> Self {
        Self {
            impedance: "pu".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceUnits {
    #[serde(default)]
    power: PowerUnit,
    #[serde(default)]
    parameters: ParameterBase,
}

fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_circuit() -> u32 {
    1
}
fn default_v_floor() -> f64 {
    DEFAULT_V_FLOOR
}
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusItem {
    index: usize,
    #[serde(default)]
    base_kv: f64,
    kind: BusKind,
    #[serde(default = "default_one")]
    v_setpoint: f64,
    #[serde(default)]
    p_load: f64,
    #[serde(default)]
    q_load: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    infinite: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchItem {
    from: usize,
    to: usize,
    #[serde(default = "default_circuit")]
    circuit: u32,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "default_one")]
    tap: f64,
    #[serde(default = "default_true")]
    in_service: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadItem {
    bus: usize,
    p: f64,
    #[serde(default)]
    q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncItem {
    bus: usize,
    #[serde(default)]
    rated_mva: Option<f64>,
    h: f64,
    #[serde(default)]
    d: f64,
    xd_prime: f64,
    #[serde(default)]
    p_gen: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_mech: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e_prime_mag: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GflItem {
    bus: usize,
    #[serde(default)]
    rated_mva: Option<f64>,
    p_vs: f64,
    t_v: f64,
    t_p: f64,
    h_v: f64,
    k_p: f64,
    k_i: f64,
    #[serde(default = "default_v_floor")]
    v_floor: f64,
}

/// Reads and validates a case file.
pub fn load_case(path: impl AsRef<Path>, format: CaseFormat) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CaseFormat::Json => case_from_json(&text),
    }
}

/// Writes a case as pu on the system base.
pub fn save_case(case: &NetworkCase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, case_to_json(case)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn case_from_json(text: &str) -> Result<NetworkCase> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.branches.units.impedance != "pu" {
        return Err(Error::Parse(format!(
            "branches.units.impedance must be \"pu\", got {:?}",
            doc.branches.units.impedance
        )));
    }
    let base = doc.system.base_mva;
    let power = |unit: PowerUnit, v: f64| match unit {
        PowerUnit::Mw => v / base,
        PowerUnit::Pu => v,
    };

    let buses = doc
        .buses
        .items
        .iter()
        .map(|b| Bus {
            index: b.index,
            base_kv: b.base_kv,
            kind: b.kind,
            v_setpoint: b.v_setpoint,
            p_load: power(doc.buses.units.power, b.p_load),
            q_load: power(doc.buses.units.power, b.q_load),
            infinite: b.infinite,
        })
        .collect();
    let branches = doc
        .branches
        .items
        .iter()
        .map(|b| Branch {
            from_bus: b.from,
            to_bus: b.to,
            circuit: b.circuit,
            r: b.r,
            x: b.x,
            b_shunt: b.b,
            tap: b.tap,
            in_service: b.in_service,
        })
        .collect();
    let loads = doc
        .loads
        .items
        .iter()
        .map(|l| Load {
            bus: l.bus,
            p: power(doc.loads.units.power, l.p),
            q: power(doc.loads.units.power, l.q),
        })
        .collect();

    let su = doc.sync_machines.units.clone();
    let sync_machines = doc
        .sync_machines
        .items
        .iter()
        .map(|m| {
            let rated = m.rated_mva.unwrap_or(base);
            // machine base → system base: H, D scale with S_rated/S_base,
            // impedances with S_base/S_rated
            let (k_energy, k_imp) = match su.parameters {
                ParameterBase::Machine => (rated / base, base / rated),
                ParameterBase::System => (1.0, 1.0),
            };
            SyncMachineParams {
                bus: m.bus,
                h: m.h * k_energy,
                d: m.d * k_energy,
                xd_prime: m.xd_prime * k_imp,
                p_gen: power(su.power, m.p_gen),
                p_mech: m.p_mech.map(|p| power(su.power, p)),
                e_prime_mag: m.e_prime_mag,
                rated_mva: rated,
            }
        })
        .collect();

    let gu = doc.gfl_units.units.clone();
    let gfl_units = doc
        .gfl_units
        .items
        .iter()
        .map(|g| {
            let rated = g.rated_mva.unwrap_or(base);
            let k_energy = match gu.parameters {
                ParameterBase::Machine => rated / base,
                ParameterBase::System => 1.0,
            };
            GflParams {
                bus: g.bus,
                p_vs: power(gu.power, g.p_vs),
                t_v: g.t_v,
                t_p: g.t_p,
                h_v: g.h_v * k_energy,
                k_p: g.k_p,
                k_i: g.k_i,
                v_floor: g.v_floor,
                rated_mva: rated,
            }
        })
        .collect();

    NetworkCase {
        name: doc.system.name,
        system_base_mva: base,
        frequency_hz: doc.system.frequency_hz,
        buses,
        branches,
        loads,
        sync_machines,
        gfl_units,
    }
    .validated()
}

pub fn case_to_json(case: &NetworkCase) -> Result<String> {
    let pu = PowerUnits {
        power: PowerUnit::Pu,
    };
    let dev = DeviceUnits {
        power: PowerUnit::Pu,
        parameters: ParameterBase::System,
    };
    let doc = Document {
        system: SystemSection {
            name: case.name.clone(),
            base_mva: case.system_base_mva,
            frequency_hz: case.frequency_hz,
        },
        buses: Section {
            units: pu.clone(),
            items: case
                .buses
                .iter()
                .map(|b| BusItem {
                    index: b.index,
                    base_kv: b.base_kv,
                    kind: b.kind,
                    v_setpoint: b.v_setpoint,
                    p_load: b.p_load,
                    q_load: b.q_load,
                    infinite: b.infinite,
                })
                .collect(),
        },
        branches: Section {
            units: ImpedanceUnits::default(),
            items: case
                .branches
                .iter()
                .map(|b| BranchItem {
                    from: b.from_bus,
                    to: b.to_bus,
                    circuit: b.circuit,
                    r: b.r,
                    x: b.x,
                    b: b.b_shunt,
                    tap: b.tap,
                    in_service: b.in_service,
                })
                .collect(),
        },
        loads: Section {
            units: pu,
            items: case
                .loads
                .iter()
                .map(|l| LoadItem {
                    bus: l.bus,
                    p: l.p,
                    q: l.q,
                })
                .collect(),
        },
        sync_machines: Section {
            units: dev.clone(),
            items: case
                .sync_machines
                .iter()
                .map(|m| SyncItem {
                    bus: m.bus,
                    rated_mva: Some(m.rated_mva),
                    h: m.h,
                    d: m.d,
                    xd_prime: m.xd_prime,
                    p_gen: m.p_gen,
                    p_mech: m.p_mech,
                    e_prime_mag: m.e_prime_mag,
                })
                .collect(),
        },
        gfl_units: Section {
            units: dev,
            items: case
                .gfl_units
                .iter()
                .map(|g| GflItem {
                    bus: g.bus,
                    rated_mva: Some(g.rated_mva),
                    p_vs: g.p_vs,
                    t_v: g.t_v,
                    t_p: g.t_p,
                    h_v: g.h_v,
                    k_p: g.k_p,
                    k_i: g.k_i,
                    v_floor: g.v_floor,
                })
                .collect(),
        },
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
      "system": {"name": "t", "base_mva": 100.0, "frequency_hz": 60.0},
      "buses": {"units": {"power": "MW"}, "items": [
        {"index": 1, "kind": "pv", "v_setpoint": 1.0},
        {"index": 2, "kind": "slack", "v_setpoint": 1.0, "infinite": true}
      ]},
      "branches": {"units": {"impedance": "pu"}, "items": [
        {"from": 1, "to": 2, "r": 0.0, "x": 0.5}
      ]},
      "sync_machines": {"units": {"power": "MW", "parameters": "machine"}, "items": [
        {"bus": 1, "rated_mva": 500.0, "h": 3.0, "d": 2.0, "xd_prime": 0.25, "p_gen": 80.0}
      ]}
    }"#;

    #[test]
    fn machine_base_is_converted() {
        let case = case_from_json(TWO_BUS).unwrap();
        let m = &case.sync_machines[0];
        assert!((m.h - 15.0).abs() < 1e-12);
        assert!((m.d - 10.0).abs() < 1e-12);
        assert!((m.xd_prime - 0.05).abs() < 1e-12);
        assert!((m.p_gen - 0.8).abs() < 1e-12);
        assert!(case.gfl_units.is_empty() && case.loads.is_empty());
    }

    #[test]
    fn rejects_unknown_field() {
        let text = TWO_BUS.replace("\"r\": 0.0", "\"resistance\": 0.0");
        assert!(matches!(case_from_json(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn dangling_bus_fails_validation() {
        let text = TWO_BUS.replace("\"to\": 2", "\"to\": 99");
        match case_from_json(&text) {
            Err(Error::InvalidCase(report)) => {
                let msg = report.to_string();
                assert!(msg.contains("branches[0]") && msg.contains("99"), "{msg}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }
}
