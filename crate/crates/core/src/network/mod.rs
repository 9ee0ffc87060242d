//! Network equations: bus admittance matrices for each topology phase, bolted
//! faults, Kron reduction onto the sources and the algebraic solve that
//! couples devices through the network.

mod algebraic;
mod powerflow;
mod reduction;

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

pub use algebraic::{solve_algebraic, AlgebraicOptions, AlgebraicSolution, GflInjection};
pub use powerflow::{initial_power_flow, PowerFlowSolution, PF_MAX_ITERATIONS, PF_TOLERANCE};
pub use reduction::{kron_reduce, reduce_to_sources, KronReduction, NodeKind, ReducedNetwork};

use crate::case::{FaultScenario, NetworkCase};
use crate::error::{Error, Result};
use crate::scalar::{czero, lit, Scalar};

/// Topology phase of the fault sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreFault,
    DuringFault,
    PostFault,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::PreFault => "pre_fault",
            Phase::DuringFault => "during_fault",
            Phase::PostFault => "post_fault",
        })
    }
}

/// Dense bus admittance matrix. Row `i` belongs to bus `buses[i]`; a bus
/// grounded by a bolted fault is absent from both `buses` and `entries`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix<T: Scalar> {
    pub phase: Phase,
    pub buses: Vec<usize>,
    pub entries: DMatrix<Complex<T>>,
    pub grounded: Option<usize>,
}

impl<T: Scalar> AdmittanceMatrix<T> {
    pub fn dimension(&self) -> usize {
        self.buses.len()
    }

    pub fn position(&self, bus: usize) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }
}

/// Y-bus of all in-service branches, optionally leaving one branch out.
pub(crate) fn assemble<T: Scalar>(case: &NetworkCase, skip: Option<usize>) -> DMatrix<Complex<T>> {
    let n = case.buses.len();
    let mut y = DMatrix::from_element(n, n, czero::<T>());
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service || Some(k) == skip {
            continue;
        }
        let f = case.bus_position(br.from_bus).expect("validated case");
        let t = case.bus_position(br.to_bus).expect("validated case");
        let z = Complex::new(lit::<T>(br.r), lit::<T>(br.x));
        let ys = Complex::new(T::one(), T::zero()) / z;
        let half_b = Complex::new(T::zero(), lit::<T>(br.b_shunt * 0.5));
        let tap = lit::<T>(br.tap);
        y[(f, f)] += (ys + half_b) / (tap * tap);
        y[(t, t)] += ys + half_b;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    y
}

/// Buses that cannot reach bus `root` over in-service branches (excluding `skip`).
pub(crate) fn unreachable_buses(case: &NetworkCase, skip: Option<usize>) -> Vec<usize> {
    let n = case.buses.len();
    if n == 0 {
        return Vec::new();
    }
    let mut adjacency = vec![Vec::new(); n];
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service || Some(k) == skip {
            continue;
        }
        let f = case.bus_position(br.from_bus).expect("validated case");
        let t = case.bus_position(br.to_bus).expect("validated case");
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    let root = case
        .buses
        .iter()
        .position(|b| b.kind == crate::case::BusKind::Slack)
        .unwrap_or(0);
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(i) = stack.pop() {
        for &k in &adjacency[i] {
            if !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        }
    }
    (0..n).filter(|&i| !seen[i]).map(|i| case.buses[i].index).collect()
}

/// Builds the admittance matrix of one phase of `scenario`.
///
/// The pre-fault matrix uses every in-service branch, the faulted one grounds
/// `fault_bus` on top of it and the post-fault one drops `tripped_branch`.
pub fn build_admittance<T: Scalar>(
    case: &NetworkCase,
    phase: Phase,
    scenario: &FaultScenario,
) -> Result<AdmittanceMatrix<T>> {
    let buses: Vec<usize> = case.buses.iter().map(|b| b.index).collect();
    match phase {
        Phase::PreFault => {
            let islanded = unreachable_buses(case, None);
            if !islanded.is_empty() {
                return Err(Error::Islanded {
                    phase: phase.to_string(),
                    buses: islanded,
                });
            }
            Ok(AdmittanceMatrix {
                phase,
                buses,
                entries: assemble(case, None),
                grounded: None,
            })
        }
        Phase::DuringFault => {
            let mut y = build_admittance(case, Phase::PreFault, scenario)?;
            y.phase = Phase::DuringFault;
            match scenario.fault_bus {
                Some(bus) => apply_bolted_fault(&y, bus),
                None => Ok(y),
            }
        }
        Phase::PostFault => {
            let Some(trip) = scenario.tripped_branch else {
                let mut y = build_admittance(case, Phase::PreFault, scenario)?;
                y.phase = Phase::PostFault;
                return Ok(y);
            };
            let k = case.find_branch(&trip)?;
            if !case.branches[k].in_service {
                return Err(Error::BranchOutOfService(trip.to_string()));
            }
            let islanded = unreachable_buses(case, Some(k));
            if !islanded.is_empty() {
                return Err(Error::Islanded {
                    phase: phase.to_string(),
                    buses: islanded,
                });
            }
            Ok(AdmittanceMatrix {
                phase,
                buses,
                entries: assemble(case, Some(k)),
                grounded: None,
            })
        }
    }
}

/// Grounds `fault_bus` (V = 0) by deleting its row and column.
pub fn apply_bolted_fault<T: Scalar>(y: &AdmittanceMatrix<T>, fault_bus: usize) -> Result<AdmittanceMatrix<T>> {
    let pos = y
        .position(fault_bus)
        .ok_or_else(|| Error::InvalidScenario(format!("fault bus {fault_bus} is not in the network")))?;
    let entries = y.entries.clone().remove_row(pos).remove_column(pos);
    let mut buses = y.buses.clone();
    buses.remove(pos);
    Ok(AdmittanceMatrix {
        phase: Phase::DuringFault,
        buses,
        entries,
        grounded: Some(fault_bus),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{builtin_case, BranchRef, Branch};

    fn line(from: usize, to: usize, x: f64) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            circuit: 1,
            r: 0.0,
            x,
            b_shunt: 0.0,
            tap: 1.0,
            in_service: true,
        }
    }

    fn two_bus_single_line() -> NetworkCase {
        let mut case = builtin_case("smib").unwrap();
        case.branches = vec![line(1, 2, 0.5)];
        case
    }

    #[test]
    fn single_line_off_diagonal() {
        let case = two_bus_single_line();
        let s = FaultScenario::new(1, BranchRef::new(1, 2), 0.1);
        let y = build_admittance::<f64>(&case, Phase::PreFault, &s).unwrap();
        let off = y.entries[(0, 1)];
        assert!((off.re - 0.0).abs() < 1e-15 && (off.im - 2.0).abs() < 1e-12);
        assert!((y.entries[(0, 0)].im + 2.0).abs() < 1e-12);
    }

    #[test]
    fn tripping_only_branch_islands() {
        let case = two_bus_single_line();
        let s = FaultScenario::new(1, BranchRef::new(1, 2), 0.1);
        let err = build_admittance::<f64>(&case, Phase::PostFault, &s).unwrap_err();
        assert!(matches!(err, Error::Islanded { .. }));
    }

    #[test]
    fn tripping_out_of_service_branch_fails() {
        let mut case = builtin_case("smib").unwrap();
        case.branches[1].in_service = false;
        let s = FaultScenario::new(1, BranchRef { from: 1, to: 2, circuit: Some(2) }, 0.1);
        let err = build_admittance::<f64>(&case, Phase::PostFault, &s).unwrap_err();
        assert!(matches!(err, Error::BranchOutOfService(_)));
    }

    #[test]
    fn ieee39_prefault_is_symmetric_and_matches_sparse_assembly() {
        let case = builtin_case("ieee39_sync").unwrap();
        let s = FaultScenario::new(2, BranchRef::new(2, 3), 0.1);
        let y = build_admittance::<f64>(&case, Phase::PreFault, &s).unwrap();
        assert_eq!(y.dimension(), 39);
        // independent triplet assembly (tap-aware, so symmetry holds since no
        // phase shifters are present)
        let mut triplets: std::collections::BTreeMap<(usize, usize), Complex<f64>> = Default::default();
        for br in &case.branches {
            let f = br.from_bus - 1;
            let t = br.to_bus - 1;
            let ys = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
            let sh = Complex::new(0.0, br.b_shunt / 2.0);
            *triplets.entry((f, f)).or_default() += (ys + sh) / (br.tap * br.tap);
            *triplets.entry((t, t)).or_default() += ys + sh;
            *triplets.entry((f, t)).or_default() -= ys / br.tap;
            *triplets.entry((t, f)).or_default() -= ys / br.tap;
        }
        for i in 0..39 {
            for k in 0..39 {
                let expect = triplets.get(&(i, k)).copied().unwrap_or_default();
                assert!((y.entries[(i, k)] - expect).norm() < 1e-9);
                assert!((y.entries[(i, k)] - y.entries[(k, i)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn fault_then_clear_restores_dimension() {
        let case = builtin_case("ieee39_sync").unwrap();
        let s = FaultScenario::new(2, BranchRef::new(2, 3), 0.1);
        let during = build_admittance::<f64>(&case, Phase::DuringFault, &s).unwrap();
        let post = build_admittance::<f64>(&case, Phase::PostFault, &s).unwrap();
        assert_eq!(during.dimension(), 38);
        assert_eq!(during.grounded, Some(2));
        assert_eq!(post.dimension(), 39);
    }

    #[test]
    fn radial_leaf_fault_leaves_series_shunt() {
        // 1 — 2 — 3 radial, fault at leaf 3
        let mut case = builtin_case("smib").unwrap();
        case.buses.push(crate::case::Bus {
            index: 3,
            base_kv: 230.0,
            kind: crate::case::BusKind::Pq,
            v_setpoint: 1.0,
            p_load: 0.0,
            q_load: 0.0,
            infinite: false,
        });
        let mut leaf = line(2, 3, 0.4);
        leaf.r = 0.05;
        leaf.b_shunt = 0.1;
        case.branches = vec![line(1, 2, 0.5), leaf.clone()];
        let s = FaultScenario::new(3, BranchRef::new(2, 3), 0.1);
        let during = build_admittance::<f64>(&case, Phase::DuringFault, &s).unwrap();
        // network without the leaf plus the leaf's sending-end shunt
        let mut reduced = case.clone();
        reduced.branches.truncate(1);
        reduced.buses.truncate(2);
        let mut expect = assemble::<f64>(&reduced, None);
        let ys = Complex::new(1.0, 0.0) / Complex::new(leaf.r, leaf.x);
        expect[(1, 1)] += ys + Complex::new(0.0, leaf.b_shunt / 2.0);
        assert!((during.entries.clone() - expect).norm() < 1e-12);
    }
}
