//! Constant-impedance load absorption and Kron reduction onto the source
//! nodes (machine internal nodes, infinite buses, converter terminals).

use nalgebra::DMatrix;
use num_complex::Complex;

use super::{AdmittanceMatrix, Phase, PowerFlowSolution};
use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::scalar::{czero, lit, Scalar};

/// Result of eliminating every node not listed as retained.
#[derive(Debug, Clone)]
pub struct KronReduction<T: Scalar> {
    /// Transfer admittances among retained nodes, in the requested order.
    pub reduced: DMatrix<Complex<T>>,
    /// Eliminated node indices, ascending.
    pub eliminated: Vec<usize>,
    /// `V_eliminated = recovery · V_retained` for zero injection at the
    /// eliminated nodes.
    pub recovery: DMatrix<Complex<T>>,
}

/// Schur complement `Y_rr − Y_re Y_ee⁻¹ Y_er`.
pub fn kron_reduce<T: Scalar>(y: &DMatrix<Complex<T>>, retained: &[usize]) -> Result<KronReduction<T>> {
    let n = y.nrows();
    let eliminated: Vec<usize> = (0..n).filter(|i| !retained.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[(rows[r], cols[c])])
    };
    let y_rr = pick(retained, retained);
    if eliminated.is_empty() {
        return Ok(KronReduction {
            reduced: y_rr,
            eliminated,
            recovery: DMatrix::zeros(0, retained.len()),
        });
    }
    let y_re = pick(retained, &eliminated);
    let y_er = pick(&eliminated, retained);
    let y_ee = pick(&eliminated, &eliminated);
    let lu = y_ee.lu();
    let x = lu
        .solve(&y_er)
        .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
        .ok_or_else(|| Error::SingularNetwork(eliminated.clone()))?;
    Ok(KronReduction {
        reduced: y_rr - &y_re * &x,
        recovery: -x,
        eliminated,
    })
}

/// What a retained node of the reduced network represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Internal EMF node of synchronous machine `i` (index into the fleet).
    Sync(usize),
    /// Ideal source at the given bus.
    Infinite(usize),
    /// Terminal bus of converter `k`.
    Gfl(usize),
}

/// Network reduced to the device nodes for one topology phase.
///
/// Nodes are ordered sources first (machines in fleet order, then infinite
/// buses) followed by the converter terminals that are not grounded.
#[derive(Debug, Clone)]
pub struct ReducedNetwork<T: Scalar> {
    pub phase: Phase,
    pub y_reduced: DMatrix<Complex<T>>,
    pub nodes: Vec<NodeKind>,
    pub n_sync: usize,
    pub n_source: usize,
    /// Position of converter `k` within the converter block, `None` when its
    /// bus is the grounded fault bus.
    pub gfl_slot: Vec<Option<usize>>,
    pub grounded_bus: Option<usize>,
    pub infinite_voltage: Vec<Complex<T>>,
    /// Source/converter partitions of `y_reduced`.
    pub y_ss: DMatrix<Complex<T>>,
    pub y_sg: DMatrix<Complex<T>>,
    pub y_gs: DMatrix<Complex<T>>,
    pub y_gg: DMatrix<Complex<T>>,
    /// `Y_gg⁻¹` (empty without converters).
    pub y_gg_inv: DMatrix<Complex<T>>,
    /// Full-network bus voltages (case order) from node voltages.
    pub bus_recovery: DMatrix<Complex<T>>,
    pub bus_ids: Vec<usize>,
}

impl<T: Scalar> ReducedNetwork<T> {
    pub fn dimension(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_gfl_active(&self) -> usize {
        self.nodes.len() - self.n_source
    }

    /// Bus associated with each retained node: the terminal bus for a
    /// machine internal node.
    pub fn retained_buses(&self, case: &NetworkCase) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| match *n {
                NodeKind::Sync(i) => case.sync_machines[i].bus,
                NodeKind::Infinite(b) => b,
                NodeKind::Gfl(k) => case.gfl_units[k].bus,
            })
            .collect()
    }

    /// Voltages of every bus (case order) given the node voltages.
    pub fn bus_voltages(&self, node_voltages: &[Complex<T>]) -> Vec<Complex<T>> {
        let v = nalgebra::DVector::from_column_slice(node_voltages);
        (&self.bus_recovery * v).iter().copied().collect()
    }
}

/// Absorbs loads as constant admittances frozen at `equilibrium`, attaches
/// machine internal nodes behind `xd_prime` and reduces onto the sources.
pub fn reduce_to_sources<T: Scalar>(
    y: &AdmittanceMatrix<T>,
    case: &NetworkCase,
    equilibrium: &PowerFlowSolution<T>,
) -> Result<ReducedNetwork<T>> {
    let n_b = y.dimension();
    let n_sync = case.sync_machines.len();
    let dim = n_b + n_sync;
    let mut a = DMatrix::from_element(dim, dim, czero::<T>());
    a.view_mut((0, 0), (n_b, n_b)).copy_from(&y.entries);

    for (r, &bus) in y.buses.iter().enumerate() {
        let (p, q) = case.bus_load(bus);
        if p == 0.0 && q == 0.0 {
            continue;
        }
        let pos = case.bus_position(bus).expect("validated case");
        let vm = equilibrium.v_mag(pos);
        a[(r, r)] += Complex::new(lit::<T>(p), -lit::<T>(q)) / Complex::new(vm * vm, T::zero());
    }
    for (i, m) in case.sync_machines.iter().enumerate() {
        let yd = Complex::new(T::one(), T::zero()) / Complex::new(T::zero(), lit::<T>(m.xd_prime));
        let int = n_b + i;
        a[(int, int)] += yd;
        if let Some(t) = y.position(m.bus) {
            a[(t, t)] += yd;
            a[(int, t)] -= yd;
            a[(t, int)] -= yd;
        }
    }

    let mut nodes = Vec::new();
    let mut retained = Vec::new();
    for i in 0..n_sync {
        nodes.push(NodeKind::Sync(i));
        retained.push(n_b + i);
    }
    let mut infinite_voltage = Vec::new();
    for b in case.infinite_buses() {
        let r = y.position(b.index).ok_or_else(|| {
            Error::InvalidScenario(format!("bus {} is an infinite bus and cannot be faulted", b.index))
        })?;
        nodes.push(NodeKind::Infinite(b.index));
        retained.push(r);
        infinite_voltage.push(equilibrium.voltage[case.bus_position(b.index).expect("validated case")]);
    }
    let n_source = nodes.len();
    let mut gfl_slot = vec![None; case.gfl_units.len()];
    for (k, g) in case.gfl_units.iter().enumerate() {
        if let Some(r) = y.position(g.bus) {
            gfl_slot[k] = Some(nodes.len() - n_source);
            nodes.push(NodeKind::Gfl(k));
            retained.push(r);
        }
    }

    let kron = kron_reduce(&a, &retained).map_err(|e| match e {
        Error::SingularNetwork(idx) => Error::SingularNetwork(
            idx.into_iter()
                .filter(|&i| i < n_b)
                .map(|i| y.buses[i])
                .collect(),
        ),
        other => other,
    })?;

    let n_r = retained.len();
    let mut bus_recovery = DMatrix::from_element(case.buses.len(), n_r, czero::<T>());
    for (pos, bus) in case.buses.iter().enumerate() {
        let Some(r) = y.position(bus.index) else {
            continue; // grounded: V = 0
        };
        if let Some(c) = retained.iter().position(|&x| x == r) {
            bus_recovery[(pos, c)] = Complex::new(T::one(), T::zero());
        } else {
            let e = kron.eliminated.iter().position(|&x| x == r).expect("eliminated");
            bus_recovery.row_mut(pos).copy_from(&kron.recovery.row(e));
        }
    }

    let yr = kron.reduced;
    let n_g = n_r - n_source;
    let y_ss = yr.view((0, 0), (n_source, n_source)).into_owned();
    let y_sg = yr.view((0, n_source), (n_source, n_g)).into_owned();
    let y_gs = yr.view((n_source, 0), (n_g, n_source)).into_owned();
    let y_gg = yr.view((n_source, n_source), (n_g, n_g)).into_owned();
    let y_gg_inv = if n_g == 0 {
        DMatrix::zeros(0, 0)
    } else {
        y_gg.clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularNetwork(retained[n_source..].iter().map(|&r| y.buses[r]).collect()))?
    };

    Ok(ReducedNetwork {
        phase: y.phase,
        y_reduced: yr,
        nodes,
        n_sync,
        n_source,
        gfl_slot,
        grounded_bus: y.grounded,
        infinite_voltage,
        y_ss,
        y_sg,
        y_gs,
        y_gg,
        y_gg_inv,
        bus_recovery,
        bus_ids: case.buses.iter().map(|b| b.index).collect(),
    })
}
