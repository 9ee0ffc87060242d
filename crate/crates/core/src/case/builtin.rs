//! Bundled study cases.

use std::str::FromStr;

use super::{case_from_json, BusKind, GflParams, NetworkCase, DEFAULT_V_FLOOR};
use crate::error::{Error, Result};

const SMIB: &str = include_str!("../../cases/smib.json");
const IEEE39_SYNC: &str = include_str!("../../cases/ieee39_sync.json");
const IEEE39_GFL2: &str = include_str!("../../cases/ieee39_gfl2.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinCase {
    /// One machine against an infinite bus over a double-circuit line.
    Smib,
    /// New England 39-bus system, ten classical machines.
    Ieee39Sync,
    /// 39-bus system with the machines at buses 36 and 37 replaced by
    /// grid-following converters.
    Ieee39Gfl2,
}

impl BuiltinCase {
    pub const ALL: [BuiltinCase; 3] = [Self::Smib, Self::Ieee39Sync, Self::Ieee39Gfl2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Smib => "smib",
            Self::Ieee39Sync => "ieee39_sync",
            Self::Ieee39Gfl2 => "ieee39_gfl2",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Self::Smib => SMIB,
            Self::Ieee39Sync => IEEE39_SYNC,
            Self::Ieee39Gfl2 => IEEE39_GFL2,
        }
    }

    pub fn load(self) -> NetworkCase {
        case_from_json(self.source()).expect("bundled case is valid")
    }
}

impl FromStr for BuiltinCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCase(s.to_string()))
    }
}

pub fn builtin_case(name: &str) -> Result<NetworkCase> {
    Ok(name.parse::<BuiltinCase>()?.load())
}

/// Converter settings applied when a synchronous machine is replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct GflSettings {
    /// Active power reference in pu; `None` keeps the machine's dispatch.
    pub p_vs: Option<f64>,
    pub t_v: f64,
    pub t_p: f64,
    pub h_v: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub v_floor: f64,
}

impl Default for GflSettings {
    fn default() -> Self {
        Self {
            p_vs: None,
            t_v: 2.0,
            t_p: 1.0,
            h_v: 5.0,
            k_p: 10.0,
            k_i: 100.0,
            v_floor: DEFAULT_V_FLOOR,
        }
    }
}

/// Replaces the synchronous machine at `bus` by a grid-following unit that
/// inherits its bus, scheduled output and MVA base. The bus becomes PQ since
/// the converter injects no reactive current.
pub fn replace_with_gfl(case: &NetworkCase, bus: usize, settings: &GflSettings) -> Result<NetworkCase> {
    let mut out = case.clone();
    let pos = out
        .sync_machines
        .iter()
        .position(|m| m.bus == bus)
        .ok_or_else(|| Error::Invalid(format!("no synchronous machine at bus {bus}")))?;
    let machine = out.sync_machines.remove(pos);
    let bus_pos = out.bus_position(bus).expect("validated case");
    if out.buses[bus_pos].kind == BusKind::Slack {
        return Err(Error::Invalid(format!("bus {bus} is the slack bus and cannot host a converter")));
    }
    out.buses[bus_pos].kind = BusKind::Pq;
    out.gfl_units.push(GflParams {
        bus,
        p_vs: settings.p_vs.unwrap_or(machine.p_gen),
        t_v: settings.t_v,
        t_p: settings.t_p,
        h_v: settings.h_v * machine.rated_mva / case.system_base_mva,
        k_p: settings.k_p,
        k_i: settings.k_i,
        v_floor: settings.v_floor,
        rated_mva: machine.rated_mva,
    });
    out.validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::validate_case;

    #[test]
    fn every_bundled_case_is_valid() {
        for c in BuiltinCase::ALL {
            let case = c.load();
            assert!(validate_case(&case).is_empty(), "{}", c.name());
        }
    }

    #[test]
    fn smib_shape() {
        let case = builtin_case("smib").unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.sync_machines.len(), 1);
        assert_eq!(case.infinite_buses().count(), 1);
    }

    #[test]
    fn ieee39_fleets() {
        let sync = builtin_case("ieee39_sync").unwrap();
        assert_eq!(sync.buses.len(), 39);
        assert_eq!(sync.sync_machines.len(), 10);
        assert!(sync.gfl_units.is_empty());

        let gfl = builtin_case("ieee39_gfl2").unwrap();
        assert_eq!(gfl.buses.len(), 39);
        assert_eq!(gfl.sync_machines.len(), 8);
        assert_eq!(gfl.gfl_units.len(), 2);
        let buses: Vec<_> = gfl.gfl_units.iter().map(|g| g.bus).collect();
        assert_eq!(buses, vec![36, 37]);
    }

    #[test]
    fn gfl_units_carry_converter_table() {
        let gfl = builtin_case("ieee39_gfl2").unwrap();
        let base = gfl.system_base_mva;
        let expected = [(560.0, 7.5), (540.0, 5.0)];
        for (g, (p_mw, h_v)) in gfl.gfl_units.iter().zip(expected) {
            assert!((g.p_vs * base - p_mw).abs() < 1e-9);
            assert!((g.h_v * base / g.rated_mva - h_v).abs() < 1e-12);
            assert_eq!((g.t_v, g.t_p, g.k_p, g.k_i), (2.0, 1.0, 10.0, 100.0));
        }
    }

    #[test]
    fn bundled_gfl_case_follows_replacement_rule() {
        let sync = builtin_case("ieee39_sync").unwrap();
        let step = replace_with_gfl(
            &sync,
            36,
            &GflSettings {
                h_v: 7.5,
                ..GflSettings::default()
            },
        )
        .unwrap();
        let mut derived = replace_with_gfl(&step, 37, &GflSettings::default()).unwrap();
        let bundled = builtin_case("ieee39_gfl2").unwrap();
        derived.name = bundled.name.clone();
        assert_eq!(derived, bundled);
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(builtin_case("ieee118"), Err(Error::UnknownCase(_))));
    }
}
