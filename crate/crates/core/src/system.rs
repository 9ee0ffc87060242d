//! The coupled differential-algebraic model `ẋ = P(x, y)`, `0 = S(x, y)` for
//! one case and fault scenario, with its analytic Jacobian blocks.
//!
//! State vector `x = [δ, ω, x_v, P_v, θ_P, x_P]` (each block in fleet order).
//! Algebraic vector `y = [P_e (machines), V (converter buses), θ (converter
//! buses)]`. Machine angles and `θ_P` are kept in the synchronous frame.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::case::{FaultScenario, NetworkCase};
use crate::devices::{
    gfl_derivatives_relative, gfl_partials, sync_derivatives, Frame, GflDevice, GflState, SyncDevice, SyncState,
};
use crate::error::{Error, Result};
use crate::network::{
    build_admittance, initial_power_flow, reduce_to_sources, solve_algebraic, AlgebraicOptions, AlgebraicSolution,
    GflInjection, Phase, PowerFlowSolution, ReducedNetwork,
};
use crate::scalar::{cabs, carg, czero, j, lit, polar, to_f64, Scalar};

/// Tolerance on `‖ẋ‖∞` at the initial point.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

/// Index map of the state and algebraic vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_sync: usize,
    pub n_gfl: usize,
}

impl Layout {
    pub fn n_states(&self) -> usize {
        2 * self.n_sync + 4 * self.n_gfl
    }
    pub fn n_algebraic(&self) -> usize {
        self.n_sync + 2 * self.n_gfl
    }
    pub fn delta(&self, i: usize) -> usize {
        i
    }
    pub fn omega(&self, i: usize) -> usize {
        self.n_sync + i
    }
    pub fn x_v(&self, k: usize) -> usize {
        2 * self.n_sync + k
    }
    pub fn p_v(&self, k: usize) -> usize {
        2 * self.n_sync + self.n_gfl + k
    }
    pub fn theta_p(&self, k: usize) -> usize {
        2 * self.n_sync + 2 * self.n_gfl + k
    }
    pub fn x_p(&self, k: usize) -> usize {
        2 * self.n_sync + 3 * self.n_gfl + k
    }
    pub fn p_e(&self, i: usize) -> usize {
        i
    }
    pub fn v(&self, k: usize) -> usize {
        self.n_sync + k
    }
    pub fn theta(&self, k: usize) -> usize {
        self.n_sync + self.n_gfl + k
    }

    /// Column names of the state vector, e.g. `delta[3]`, `theta_p[1]`.
    pub fn state_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_states());
        for (label, n) in [
            ("delta", self.n_sync),
            ("omega", self.n_sync),
            ("x_v", self.n_gfl),
            ("p_v", self.n_gfl),
            ("theta_p", self.n_gfl),
            ("x_p", self.n_gfl),
        ] {
            names.extend((0..n).map(|i| format!("{label}[{i}]")));
        }
        names
    }

    pub fn algebraic_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_sync).map(|i| format!("p_e[{i}]")).collect();
        names.extend((0..self.n_gfl).map(|k| format!("v[{k}]")));
        names.extend((0..self.n_gfl).map(|k| format!("theta[{k}]")));
        names
    }
}

/// Structured view of a state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState<T> {
    pub t: f64,
    pub sync: Vec<SyncState<T>>,
    pub gfl: Vec<GflState<T>>,
}

impl<T: Scalar> SystemState<T> {
    pub fn from_vector(layout: &Layout, t: f64, x: &DVector<T>) -> Self {
        Self {
            t,
            sync: (0..layout.n_sync)
                .map(|i| SyncState {
                    delta: x[layout.delta(i)],
                    omega: x[layout.omega(i)],
                })
                .collect(),
            gfl: (0..layout.n_gfl)
                .map(|k| GflState {
                    x_v: x[layout.x_v(k)],
                    p_v: x[layout.p_v(k)],
                    theta_p: x[layout.theta_p(k)],
                    x_p: x[layout.x_p(k)],
                })
                .collect(),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n_sync: self.sync.len(),
            n_gfl: self.gfl.len(),
        }
    }

    pub fn to_vector(&self) -> DVector<T> {
        let l = self.layout();
        let mut x = DVector::zeros(l.n_states());
        for (i, s) in self.sync.iter().enumerate() {
            x[l.delta(i)] = s.delta;
            x[l.omega(i)] = s.omega;
        }
        for (k, g) in self.gfl.iter().enumerate() {
            x[l.x_v(k)] = g.x_v;
            x[l.p_v(k)] = g.p_v;
            x[l.theta_p(k)] = g.theta_p;
            x[l.x_p(k)] = g.x_p;
        }
        x
    }
}

/// Equilibrium devices and state derived from a converged power flow.
#[derive(Debug, Clone)]
pub struct DeviceInit<T: Scalar> {
    pub state: SystemState<T>,
    pub sync: Vec<SyncDevice<T>>,
    pub gfl: Vec<GflDevice<T>>,
    /// `‖ẋ‖∞` at the assembled state on the pre-fault network.
    pub residual: T,
}

/// Places every device at the operating point of `pf`.
///
/// Machines: `E′∠δ = V_t + j·xd′·I_t`, `ω` synchronous, `P_M = P_e`.
/// Converters: `θ_P = θ`, `x_P = x_v = 0`, `P_v = P_vs`.
pub fn init_devices<T: Scalar>(
    case: &NetworkCase,
    pf: &PowerFlowSolution<T>,
    frame: &Frame<T>,
) -> Result<DeviceInit<T>> {
    let mut owners = std::collections::BTreeMap::new();
    for m in &case.sync_machines {
        *owners.entry(m.bus).or_insert(0) += 1;
    }
    for g in &case.gfl_units {
        *owners.entry(g.bus).or_insert(0) += 1;
    }
    if let Some((bus, _)) = owners.iter().find(|(_, n)| **n > 1) {
        return Err(Error::Inconsistent(format!(
            "bus {bus} hosts more than one device; the dispatch split is undefined"
        )));
    }

    let mut sync_states = Vec::new();
    let mut sync = Vec::new();
    for (i, m) in case.sync_machines.iter().enumerate() {
        let pos = case.bus_position(m.bus).expect("validated case");
        let v = pf.voltage[pos];
        let s = pf.generation(case, pos);
        let current = (s / v).conj();
        let e = v + Complex::new(T::zero(), lit(m.xd_prime)) * current;
        let p_e = (e * current.conj()).re;
        let e_mag = to_f64(cabs(e));
        if let Some(pm) = m.p_mech {
            if (pm - to_f64(p_e)).abs() > 1e-6 {
                return Err(Error::Inconsistent(format!(
                    "sync_machines[{i}]: mechanical power {pm} differs from equilibrium output {}",
                    to_f64(p_e)
                )));
            }
        }
        if let Some(em) = m.e_prime_mag {
            if (em - e_mag).abs() > 1e-6 {
                return Err(Error::Inconsistent(format!(
                    "sync_machines[{i}]: E' = {em} differs from the value {e_mag} implied by the power flow"
                )));
            }
        }
        sync.push(SyncDevice::new(m, to_f64(p_e), e_mag));
        sync_states.push(SyncState {
            delta: carg(e),
            omega: frame.synchronous_speed(),
        });
    }

    let mut gfl_states = Vec::new();
    let mut gfl = Vec::new();
    for (k, g) in case.gfl_units.iter().enumerate() {
        let pos = case.bus_position(g.bus).expect("validated case");
        let s = pf.generation(case, pos);
        if (to_f64(s.re) - g.p_vs).abs() > 1e-6 || to_f64(s.im).abs() > 1e-6 {
            return Err(Error::Inconsistent(format!(
                "gfl_units[{k}]: power flow dispatch {:.6}{:+.6}j pu does not match P_vs = {} with zero reactive output",
                to_f64(s.re),
                to_f64(s.im),
                g.p_vs
            )));
        }
        let dev = GflDevice::from(g);
        gfl_states.push(GflState {
            x_v: T::zero(),
            p_v: dev.p_vs,
            theta_p: pf.v_ang(pos),
            x_p: T::zero(),
        });
        gfl.push(dev);
    }

    let state = SystemState {
        t: 0.0,
        sync: sync_states,
        gfl: gfl_states,
    };
    let y = build_admittance::<T>(case, Phase::PreFault, &FaultScenario::no_fault(1.0, 1.0))?;
    let net = reduce_to_sources(&y, case, pf)?;
    let devices = Devices {
        layout: state.layout(),
        frame: *frame,
        sync: sync.clone(),
        gfl: gfl.clone(),
    };
    let x = state.to_vector();
    let alg = devices.solve(&net, &x, None, &AlgebraicOptions::default())?;
    let f = devices.rhs(&x, &devices.y_vector(&alg));
    let (worst, residual) = f
        .iter()
        .enumerate()
        .fold((0, T::zero()), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    if residual > T::tolerance(EQUILIBRIUM_TOLERANCE) {
        return Err(Error::Initialization {
            device: devices.describe_state(worst, case),
            residual: to_f64(residual),
        });
    }
    Ok(DeviceInit {
        state,
        sync,
        gfl,
        residual,
    })
}

/// Device fleet in working precision plus the frame conventions.
#[derive(Debug, Clone)]
pub struct Devices<T: Scalar> {
    pub layout: Layout,
    pub frame: Frame<T>,
    pub sync: Vec<SyncDevice<T>>,
    pub gfl: Vec<GflDevice<T>>,
}

/// The four blocks of the linearized DAE.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks<T: Scalar> {
    pub px: DMatrix<T>,
    pub py: DMatrix<T>,
    pub sx: DMatrix<T>,
    pub sy: DMatrix<T>,
}

impl<T: Scalar> JacobianBlocks<T> {
    /// `(J, K)` with `K = −S_y⁻¹ S_x` (so `dy = K dx`) and `J = P_x + P_y K`.
    pub fn reduced(&self) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let k = if self.sy.nrows() == 0 {
            DMatrix::zeros(0, self.sx.ncols())
        } else {
            let lu = self.sy.clone().lu();
            let sol = lu.solve(&self.sx).filter(|m| m.iter().all(|v| v.is_finite()));
            match sol {
                Some(m) => -m,
                None => {
                    return Err(Error::SingularAlgebraicJacobian {
                        condition: condition_estimate(&self.sy),
                    })
                }
            }
        };
        let jac = &self.px + &self.py * &k;
        Ok((jac, k))
    }
}

/// Ratio of extreme singular values (∞ when singular).
pub fn condition_estimate<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    let min = sv.iter().fold(T::max_value().unwrap_or(max), |a, &b| a.min(b));
    if min == T::zero() {
        f64::INFINITY
    } else {
        to_f64(max / min)
    }
}

impl<T: Scalar> Devices<T> {
    pub fn emf(&self, x: &DVector<T>) -> Vec<Complex<T>> {
        self.sync
            .iter()
            .enumerate()
            .map(|(i, m)| polar(m.e_mag, x[self.layout.delta(i)]))
            .collect()
    }

    pub fn injections(&self, x: &DVector<T>) -> Vec<GflInjection<T>> {
        self.gfl
            .iter()
            .enumerate()
            .map(|(k, g)| GflInjection {
                p_v: x[self.layout.p_v(k)],
                theta_p: x[self.layout.theta_p(k)],
                v_floor: g.v_floor,
            })
            .collect()
    }

    /// Algebraic solve for the state `x`; `hint` is a nearby earlier solution.
    pub fn solve(
        &self,
        net: &ReducedNetwork<T>,
        x: &DVector<T>,
        hint: Option<&AlgebraicSolution<T>>,
        options: &AlgebraicOptions,
    ) -> Result<AlgebraicSolution<T>> {
        let hint = hint.map(|h| (h.v_gfl.as_slice(), h.theta_gfl.as_slice()));
        solve_algebraic(net, &self.emf(x), &self.injections(x), hint, options)
    }

    pub fn y_vector(&self, alg: &AlgebraicSolution<T>) -> DVector<T> {
        let l = &self.layout;
        let mut y = DVector::zeros(l.n_algebraic());
        for i in 0..l.n_sync {
            y[l.p_e(i)] = alg.p_e_sync[i];
        }
        for k in 0..l.n_gfl {
            y[l.v(k)] = alg.v_gfl[k];
            y[l.theta(k)] = alg.theta_gfl[k];
        }
        y
    }

    /// `P(x, y)`.
    pub fn rhs(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let l = &self.layout;
        let mut f = DVector::zeros(l.n_states());
        for (i, dev) in self.sync.iter().enumerate() {
            let s = SyncState {
                delta: x[l.delta(i)],
                omega: x[l.omega(i)],
            };
            let (dd, dw) = sync_derivatives(&s, y[l.p_e(i)], dev, &self.frame);
            f[l.delta(i)] = dd;
            f[l.omega(i)] = dw;
        }
        for (k, dev) in self.gfl.iter().enumerate() {
            let s = self.gfl_state(x, k);
            let d = gfl_derivatives_relative(&s, y[l.v(k)], y[l.theta(k)], dev, &self.frame);
            f[l.x_v(k)] = d[0];
            f[l.p_v(k)] = d[1];
            f[l.theta_p(k)] = d[2];
            f[l.x_p(k)] = d[3];
        }
        f
    }

    fn gfl_state(&self, x: &DVector<T>, k: usize) -> GflState<T> {
        let l = &self.layout;
        GflState {
            x_v: x[l.x_v(k)],
            p_v: x[l.p_v(k)],
            theta_p: x[l.theta_p(k)],
            x_p: x[l.x_p(k)],
        }
    }

    fn sources(&self, net: &ReducedNetwork<T>, x: &DVector<T>) -> DVector<Complex<T>> {
        let mut e = DVector::from_element(net.n_source, czero::<T>());
        for (i, v) in self.emf(x).into_iter().enumerate() {
            e[i] = v;
        }
        for (r, v) in net.infinite_voltage.iter().enumerate() {
            e[net.n_sync + r] = *v;
        }
        e
    }

    fn converter_voltages(&self, net: &ReducedNetwork<T>, y: &DVector<T>) -> DVector<Complex<T>> {
        let l = &self.layout;
        let mut v = DVector::from_element(net.n_gfl_active(), czero::<T>());
        for k in 0..l.n_gfl {
            if let Some(s) = net.gfl_slot[k] {
                v[s] = polar(y[l.v(k)], y[l.theta(k)]);
            }
        }
        v
    }

    fn current(&self, k: usize, x: &DVector<T>, v_mag: T) -> Complex<T> {
        let l = &self.layout;
        polar(x[l.p_v(k)] / v_mag.max(self.gfl[k].v_floor), x[l.theta_p(k)])
    }

    /// `S(x, y)`: machine power definitions, converter-bus current balance
    /// (real and imaginary rows) and, for a grounded converter, `V = 0` and
    /// `θ = θ_P`.
    pub fn residual(&self, net: &ReducedNetwork<T>, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let l = &self.layout;
        let e = self.sources(net, x);
        let v = self.converter_voltages(net, y);
        let i_s = &net.y_ss * &e + &net.y_sg * &v;
        let f_g = &net.y_gs * &e + &net.y_gg * &v;
        let mut r = DVector::zeros(l.n_algebraic());
        for i in 0..l.n_sync {
            r[l.p_e(i)] = y[l.p_e(i)] - (e[i] * i_s[i].conj()).re;
        }
        for k in 0..l.n_gfl {
            match net.gfl_slot[k] {
                Some(s) => {
                    let z = f_g[s] - self.current(k, x, y[l.v(k)]);
                    r[l.v(k)] = z.re;
                    r[l.theta(k)] = z.im;
                }
                None => {
                    r[l.v(k)] = y[l.v(k)];
                    r[l.theta(k)] = y[l.theta(k)] - x[l.theta_p(k)];
                }
            }
        }
        r
    }

    /// Analytic `∂P/∂x`, `∂P/∂y`, `∂S/∂x`, `∂S/∂y` at `(x, y)` on `net`.
    pub fn jacobian_blocks(&self, net: &ReducedNetwork<T>, x: &DVector<T>, y: &DVector<T>) -> JacobianBlocks<T> {
        let l = &self.layout;
        let (n, m) = (l.n_states(), l.n_algebraic());
        let mut px = DMatrix::zeros(n, n);
        let mut py = DMatrix::zeros(n, m);
        let mut sx = DMatrix::zeros(m, n);
        let mut sy = DMatrix::zeros(m, m);

        for (i, dev) in self.sync.iter().enumerate() {
            let two_h = dev.h + dev.h;
            if self.frame.omega_pu {
                px[(l.delta(i), l.omega(i))] = self.frame.omega0;
                py[(l.omega(i), l.p_e(i))] = -T::one() / two_h;
            } else {
                px[(l.delta(i), l.omega(i))] = T::one();
                py[(l.omega(i), l.p_e(i))] = -self.frame.omega0 / two_h;
            }
            px[(l.omega(i), l.omega(i))] = -dev.d / two_h;
        }
        for (k, dev) in self.gfl.iter().enumerate() {
            let s = self.gfl_state(x, k);
            let (dx, dy) = gfl_partials(&s, y[l.v(k)], y[l.theta(k)], dev, &self.frame);
            let rows = [l.x_v(k), l.p_v(k), l.theta_p(k), l.x_p(k)];
            for (r, &row) in rows.iter().enumerate() {
                for (c, &col) in rows.iter().enumerate() {
                    px[(row, col)] = dx[r][c];
                }
                py[(row, l.v(k))] = dy[r][0];
                py[(row, l.theta(k))] = dy[r][1];
            }
        }

        let e = self.sources(net, x);
        let v = self.converter_voltages(net, y);
        let i_s = &net.y_ss * &e + &net.y_sg * &v;
        let jj = j::<T>();
        let active: Vec<(usize, usize)> = (0..l.n_gfl).filter_map(|k| net.gfl_slot[k].map(|s| (k, s))).collect();

        for i in 0..l.n_sync {
            let row = l.p_e(i);
            sy[(row, l.p_e(i))] = T::one();
            for mm in 0..l.n_sync {
                let mut d = e[i] * (net.y_ss[(i, mm)] * jj * e[mm]).conj();
                if mm == i {
                    d += jj * e[i] * i_s[i].conj();
                }
                sx[(row, l.delta(mm))] = -d.re;
            }
            for &(k, s) in &active {
                let unit = polar(T::one(), y[l.theta(k)]);
                sy[(row, l.v(k))] = -(e[i] * (net.y_sg[(i, s)] * unit).conj()).re;
                sy[(row, l.theta(k))] = -(e[i] * (net.y_sg[(i, s)] * jj * v[s]).conj()).re;
            }
        }
        for k in 0..l.n_gfl {
            let (re, im) = (l.v(k), l.theta(k));
            let Some(s) = net.gfl_slot[k] else {
                sy[(re, l.v(k))] = T::one();
                sy[(im, l.theta(k))] = T::one();
                sx[(im, l.theta_p(k))] = -T::one();
                continue;
            };
            let mut put_x = |col: usize, z: Complex<T>| {
                sx[(re, col)] = z.re;
                sx[(im, col)] = z.im;
            };
            for mm in 0..l.n_sync {
                put_x(l.delta(mm), net.y_gs[(s, mm)] * jj * e[mm]);
            }
            let vk = y[l.v(k)];
            let floor = self.gfl[k].v_floor;
            let unit_p = polar(T::one(), x[l.theta_p(k)]);
            put_x(l.p_v(k), -unit_p / vk.max(floor));
            put_x(l.theta_p(k), -jj * self.current(k, x, vk));
            for &(k2, s2) in &active {
                let unit = polar(T::one(), y[l.theta(k2)]);
                let mut dv = net.y_gg[(s, s2)] * unit;
                if k2 == k && vk > floor {
                    dv += unit_p * (x[l.p_v(k)] / (vk * vk));
                }
                let dth = net.y_gg[(s, s2)] * jj * v[s2];
                sy[(re, l.v(k2))] = dv.re;
                sy[(im, l.v(k2))] = dv.im;
                sy[(re, l.theta(k2))] = dth.re;
                sy[(im, l.theta(k2))] = dth.im;
            }
        }
        JacobianBlocks { px, py, sx, sy }
    }

    /// Human-readable owner of state index `idx`.
    pub fn describe_state(&self, idx: usize, case: &NetworkCase) -> String {
        let l = &self.layout;
        let ns = l.n_sync;
        if idx < 2 * ns {
            let i = idx % ns.max(1);
            format!("synchronous machine {i} (bus {})", case.sync_machines[i].bus)
        } else {
            let k = (idx - 2 * ns) % l.n_gfl.max(1);
            format!("converter {k} (bus {})", case.gfl_units[k].bus)
        }
    }
}

/// Everything needed to integrate one case under one scenario: devices at
/// equilibrium and the reduced network of each topology phase.
#[derive(Debug, Clone)]
pub struct SystemModel<T: Scalar> {
    pub devices: Devices<T>,
    pub pre: ReducedNetwork<T>,
    pub during: ReducedNetwork<T>,
    pub post: ReducedNetwork<T>,
    pub x0: DVector<T>,
    pub y0: AlgebraicSolution<T>,
    pub power_flow: PowerFlowSolution<T>,
    /// Case position of each device bus, machines first.
    pub device_buses: Vec<usize>,
    pub algebraic: AlgebraicOptions,
}

impl<T: Scalar> SystemModel<T> {
    pub fn new(case: &NetworkCase, scenario: &FaultScenario, omega_pu: bool) -> Result<Self> {
        scenario.validate()?;
        let pf = initial_power_flow::<T>(case)?;
        let frame = Frame::new(case.frequency_hz, omega_pu);
        let init = init_devices(case, &pf, &frame)?;
        let layout = init.state.layout();
        let devices = Devices {
            layout,
            frame,
            sync: init.sync,
            gfl: init.gfl,
        };
        let reduce = |phase| -> Result<ReducedNetwork<T>> {
            let y = build_admittance::<T>(case, phase, scenario)?;
            reduce_to_sources(&y, case, &pf)
        };
        let pre = reduce(Phase::PreFault)?;
        let during = reduce(Phase::DuringFault)?;
        let post = reduce(Phase::PostFault)?;
        let x0 = init.state.to_vector();
        let algebraic = AlgebraicOptions::default();
        let y0 = devices.solve(&pre, &x0, None, &algebraic)?;
        let device_buses = case
            .sync_machines
            .iter()
            .map(|m| m.bus)
            .chain(case.gfl_units.iter().map(|g| g.bus))
            .map(|b| case.bus_position(b).expect("validated case"))
            .collect();
        Ok(Self {
            devices,
            pre,
            during,
            post,
            x0,
            y0,
            power_flow: pf,
            device_buses,
            algebraic,
        })
    }

    pub fn layout(&self) -> Layout {
        self.devices.layout
    }

    pub fn network(&self, phase: Phase) -> &ReducedNetwork<T> {
        match phase {
            Phase::PreFault => &self.pre,
            Phase::DuringFault => &self.during,
            Phase::PostFault => &self.post,
        }
    }

    pub fn solve(&self, phase: Phase, x: &DVector<T>, hint: Option<&AlgebraicSolution<T>>) -> Result<AlgebraicSolution<T>> {
        self.devices.solve(self.network(phase), x, hint, &self.algebraic)
    }

    /// `ẋ` with the algebraic variables solved for.
    pub fn vector_field(&self, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> DVector<T> {
        self.devices.rhs(x, &self.devices.y_vector(alg))
    }

    pub fn jacobians(&self, phase: Phase, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> JacobianBlocks<T> {
        self.devices
            .jacobian_blocks(self.network(phase), x, &self.devices.y_vector(alg))
    }

    /// Terminal voltage of every device bus, machines first.
    pub fn terminal_voltages(&self, phase: Phase, alg: &AlgebraicSolution<T>) -> Vec<Complex<T>> {
        let net = self.network(phase);
        self.device_buses
            .iter()
            .map(|&pos| {
                (0..net.dimension()).fold(czero::<T>(), |acc, c| acc + net.bus_recovery[(pos, c)] * alg.node_voltages[c])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{builtin_case, BranchRef};

    fn model(name: &str) -> SystemModel<f64> {
        let case = builtin_case(name).unwrap();
        let scenario = if name == "smib" {
            FaultScenario::new(1, "1-2#1".parse().unwrap(), 0.1)
        } else {
            FaultScenario::new(2, BranchRef::new(2, 3), 0.1)
        };
        SystemModel::new(&case, &scenario, false).unwrap()
    }

    #[test]
    fn every_bundled_case_starts_at_equilibrium() {
        for name in ["smib", "ieee39_sync", "ieee39_gfl2"] {
            let m = model(name);
            let f = m.vector_field(&m.x0, &m.y0);
            assert!(f.amax() < 1e-8, "{name}: {}", f.amax());
            let r = m.devices.residual(&m.pre, &m.x0, &m.devices.y_vector(&m.y0));
            assert!(r.amax() < 1e-9);
        }
    }

    #[test]
    fn zero_transfer_smib_angle_is_terminal_angle() {
        let mut case = builtin_case("smib").unwrap();
        case.sync_machines[0].p_gen = 0.0;
        let pf = initial_power_flow::<f64>(&case).unwrap();
        let init = init_devices(&case, &pf, &Frame::new(60.0, false)).unwrap();
        assert!((init.state.sync[0].delta - pf.v_ang(0)).abs() < 1e-9);
        // no current when nothing is exchanged and both ends sit at 1 pu
        assert!((init.sync[0].e_mag - pf.v_mag(0)).abs() < 1e-9);
    }

    #[test]
    fn converter_dispatch_mismatch_is_rejected() {
        let case = builtin_case("ieee39_gfl2").unwrap();
        let pf = initial_power_flow::<f64>(&case).unwrap();
        let mut other = case.clone();
        other.gfl_units[0].p_vs += 0.5;
        let err = init_devices(&other, &pf, &Frame::new(60.0, false)).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
    }

    #[test]
    fn layout_round_trip() {
        let m = model("ieee39_gfl2");
        let s = SystemState::from_vector(&m.layout(), 0.0, &m.x0);
        assert_eq!(s.to_vector(), m.x0);
        assert_eq!(m.layout().state_names().len(), m.layout().n_states());
        assert_eq!(m.layout().state_names()[m.layout().theta_p(1)], "theta_p[1]");
    }

    #[test]
    fn delta_row_has_single_unit_entry() {
        let m = model("ieee39_gfl2");
        let b = m.jacobians(Phase::PostFault, &m.x0, &m.y0);
        let l = m.layout();
        for c in 0..l.n_states() {
            let expect = if c == l.omega(0) { 1.0 } else { 0.0 };
            assert_eq!(b.px[(l.delta(0), c)], expect);
        }
        assert!(b.py.row(l.delta(0)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frame_shift_leaves_flows_unchanged() {
        let m = model("ieee39_gfl2");
        let l = m.layout();
        let shift = 0.7;
        let mut x = m.x0.clone();
        for i in 0..l.n_sync {
            x[l.delta(i)] += shift;
        }
        for k in 0..l.n_gfl {
            x[l.theta_p(k)] += shift;
        }
        let a = m.solve(Phase::PostFault, &m.x0, None).unwrap();
        let b = m.solve(Phase::PostFault, &x, None).unwrap();
        for i in 0..l.n_sync {
            assert!((a.p_e_sync[i] - b.p_e_sync[i]).abs() < 1e-9);
        }
        for k in 0..l.n_gfl {
            assert!((a.v_gfl[k] - b.v_gfl[k]).abs() < 1e-9);
            assert!((a.theta_gfl[k] + shift - b.theta_gfl[k]).abs() < 1e-9);
        }
        let fa = m.vector_field(&m.x0, &a);
        let fb = m.vector_field(&x, &b);
        assert!((fa - fb).amax() < 1e-8);
    }
}
