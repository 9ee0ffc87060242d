//! Fixed-step time-domain simulation over the pre-fault, faulted and
//! post-fault topologies.

mod bisect;
mod export;
mod stability;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

pub use bisect::{bisect_cct, bisect_with, BisectionStep, CctBracket};
pub use export::{trajectory_csv, trajectory_json, write_trajectory};
pub use stability::{classify_stability, classify_with, InstabilityReason, StabilityCriteria, StabilityVerdict};

use crate::case::{FaultScenario, NetworkCase};
use crate::error::{Error, Result};
use crate::network::{AlgebraicSolution, Phase};
use crate::scalar::{lit, Scalar};
use crate::system::{Layout, SystemModel, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Trapezoidal,
    Rk4,
}

impl FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trap" | "trapezoidal" => Ok(Self::Trapezoidal),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Invalid(format!("unknown integrator `{other}` (expected trap or rk4)"))),
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Trapezoidal => "trap",
            Self::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub integrator: Integrator,
    /// Machine speed stored in pu instead of rad/s.
    pub omega_pu: bool,
    /// Newton convergence on `|Δx_i| / (1 + |x_i|)` for the trapezoidal rule.
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    /// Iterations after which the chord matrix is rebuilt at the iterate.
    pub jacobian_refresh: usize,
    /// Keep the post-fault linearization of every sample (trapezoidal rule
    /// only) so a sensitivity pass can reuse it.
    pub record_linearizations: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::Trapezoidal,
            omega_pu: false,
            newton_tolerance: 1e-10,
            max_newton_iterations: 20,
            jacobian_refresh: 5,
            record_linearizations: false,
        }
    }
}

/// Algebraic solutions on both sides of a topology switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRecord<T: Scalar> {
    pub index: usize,
    pub from: Phase,
    pub to: Phase,
    pub before: AlgebraicSolution<T>,
    pub after: AlgebraicSolution<T>,
}

/// Linearization of the post-fault system at one sample.
#[derive(Debug, Clone)]
pub struct Linearization<T: Scalar> {
    /// Reduced state Jacobian `J = P_x − P_y·S_y⁻¹·S_x`.
    pub jacobian: DMatrix<T>,
    /// `K = −S_y⁻¹·S_x`, the map from `∂x` to `∂y`.
    pub k_map: DMatrix<T>,
    /// Factorization of `I − h/2·J`.
    pub iteration: LU<T, Dyn, Dyn>,
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub t: f64,
    pub reason: String,
}

/// Sampled solution. Entry `i` holds the state at `times[i]` and the
/// algebraic solution of the topology active from that instant on; at a
/// switch the pre-switch solution is kept in `switches`.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub scenario: FaultScenario,
    pub layout: Layout,
    pub options: SimOptions,
    pub times: Vec<f64>,
    pub states: Vec<DVector<T>>,
    pub algebraics: Vec<AlgebraicSolution<T>>,
    /// Terminal voltage of each device bus, machines first.
    pub terminals: Vec<Vec<Complex<T>>>,
    pub fault_index: usize,
    pub clearing_index: usize,
    pub switches: Vec<SwitchRecord<T>>,
    /// Angles of the infinite buses (fixed).
    pub infinite_angles: Vec<T>,
    /// Case bus index of each device, machines first.
    pub device_buses: Vec<usize>,
    pub collapse: Option<Collapse>,
    /// One entry per sample from `clearing_index` on, when recorded.
    pub linearizations: Vec<Linearization<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> SystemState<T> {
        SystemState::from_vector(&self.layout, self.times[i], &self.states[i])
    }

    /// Topology governing sample `i` and the step that leaves it.
    pub fn phase_at(&self, i: usize) -> Phase {
        phase_at(i, self.fault_index, self.clearing_index)
    }

    /// Ran through the whole horizon.
    pub fn is_complete(&self) -> bool {
        self.collapse.is_none() && self.len() == self.scenario.steps() + 1
    }

    pub fn switch_at(&self, index: usize) -> Option<&SwitchRecord<T>> {
        self.switches.iter().find(|s| s.index == index)
    }

    /// Largest pairwise machine angle spread over all samples, including
    /// infinite buses.
    pub fn max_angle_spread(&self) -> T {
        (0..self.len()).fold(T::zero(), |acc, i| acc.max(self.angle_spread(i)))
    }

    pub fn angle_spread(&self, i: usize) -> T {
        let x = &self.states[i];
        let angles = (0..self.layout.n_sync)
            .map(|m| x[self.layout.delta(m)])
            .chain(self.infinite_angles.iter().copied());
        let (lo, hi) = angles.fold((T::max_value().unwrap(), T::min_value().unwrap()), |(lo, hi), a| {
            (lo.min(a), hi.max(a))
        });
        if hi < lo {
            T::zero()
        } else {
            hi - lo
        }
    }
}

pub(crate) fn phase_at(i: usize, fault: usize, clearing: usize) -> Phase {
    if i < fault {
        Phase::PreFault
    } else if i < clearing {
        Phase::DuringFault
    } else {
        Phase::PostFault
    }
}

/// Simulates `scenario` on `case`.
pub fn simulate<T: Scalar>(case: &NetworkCase, scenario: &FaultScenario, options: &SimOptions) -> Result<Trajectory<T>> {
    let model = SystemModel::new(case, scenario, options.omega_pu)?;
    simulate_model(&model, scenario, options)
}

/// Simulates with an already assembled model. The model's networks must
/// belong to the same fault and tripped branch as `scenario`; only the
/// timing may differ.
pub fn simulate_model<T: Scalar>(
    model: &SystemModel<T>,
    scenario: &FaultScenario,
    options: &SimOptions,
) -> Result<Trajectory<T>> {
    scenario.validate()?;
    let steps = scenario.steps();
    let fault_index = scenario.fault_step().min(steps + 1);
    let clearing_index = scenario.clearing_step().min(steps + 1).max(fault_index);
    let h: T = lit(scenario.dt);
    let layout = model.layout();

    let mut traj = Trajectory {
        scenario: scenario.clone(),
        layout,
        options: *options,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        algebraics: Vec::with_capacity(steps + 1),
        terminals: Vec::with_capacity(steps + 1),
        fault_index,
        clearing_index,
        switches: Vec::new(),
        infinite_angles: model.pre.infinite_voltage.iter().map(|v| v.im.atan2(v.re)).collect(),
        device_buses: model
            .device_buses
            .iter()
            .map(|&p| model.pre.bus_ids[p])
            .collect(),
        collapse: None,
        linearizations: Vec::new(),
    };

    let mut x = model.x0.clone();
    let mut alg = model.y0.clone();
    let mut phase = Phase::PreFault;
    if fault_index == 0 {
        phase = phase_at(0, fault_index, clearing_index);
        match switch(model, &x, &alg, Phase::PreFault, phase, 0) {
            Ok((after, rec)) => {
                traj.switches.push(rec);
                alg = after;
            }
            Err(e) => {
                traj.collapse = Some(Collapse { t: 0.0, reason: e.to_string() });
                return Ok(traj);
            }
        }
    }
    let mut stepper = Stepper::new(model, options, h);
    push(&mut traj, model, 0, scenario.dt, &x, &alg, phase);

    for n in 0..steps {
        let t_next = (n + 1) as f64 * scenario.dt;
        let result = stepper.step(phase, &x, &alg);
        let (x_next, alg_next) = match result {
            Ok(v) => v,
            Err(e) => {
                traj.collapse = Some(Collapse { t: t_next, reason: e.to_string() });
                break;
            }
        };
        if !x_next.iter().all(|v| v.is_finite()) {
            traj.collapse = Some(Collapse {
                t: t_next,
                reason: "state became non-finite".into(),
            });
            break;
        }
        x = x_next;
        alg = alg_next;
        let next_phase = phase_at(n + 1, fault_index, clearing_index);
        if next_phase != phase {
            match switch(model, &x, &alg, phase, next_phase, n + 1) {
                Ok((after, rec)) => {
                    traj.switches.push(rec);
                    alg = after;
                    stepper.invalidate();
                }
                Err(e) => {
                    traj.collapse = Some(Collapse { t: t_next, reason: e.to_string() });
                    break;
                }
            }
            phase = next_phase;
        }
        push(&mut traj, model, n + 1, scenario.dt, &x, &alg, phase);
    }
    traj.linearizations = stepper.log;
    Ok(traj)
}

fn push<T: Scalar>(
    traj: &mut Trajectory<T>,
    model: &SystemModel<T>,
    i: usize,
    dt: f64,
    x: &DVector<T>,
    alg: &AlgebraicSolution<T>,
    phase: Phase,
) {
    traj.times.push(i as f64 * dt);
    traj.states.push(x.clone());
    traj.terminals.push(model.terminal_voltages(phase, alg));
    traj.algebraics.push(alg.clone());
}

fn switch<T: Scalar>(
    model: &SystemModel<T>,
    x: &DVector<T>,
    before: &AlgebraicSolution<T>,
    from: Phase,
    to: Phase,
    index: usize,
) -> Result<(AlgebraicSolution<T>, SwitchRecord<T>)> {
    let after = model.solve(to, x, Some(before))?;
    let rec = SwitchRecord {
        index,
        from,
        to,
        before: before.clone(),
        after: after.clone(),
    };
    Ok((after, rec))
}

/// One integration step at a time, keeping the chord matrix between steps.
struct Stepper<'a, T: Scalar> {
    model: &'a SystemModel<T>,
    options: SimOptions,
    h: T,
    /// Factorized `I − h/2·J` and the phase it belongs to.
    chord: Option<(Phase, LU<T, Dyn, Dyn>)>,
    log: Vec<Linearization<T>>,
}

impl<'a, T: Scalar> Stepper<'a, T> {
    fn new(model: &'a SystemModel<T>, options: &SimOptions, h: T) -> Self {
        Self {
            model,
            options: *options,
            h,
            chord: None,
            log: Vec::new(),
        }
    }

    fn invalidate(&mut self) {
        self.chord = None;
    }

    fn step(&mut self, phase: Phase, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> Result<(DVector<T>, AlgebraicSolution<T>)> {
        match self.options.integrator {
            Integrator::Trapezoidal => self.trapezoidal(phase, x, alg),
            Integrator::Rk4 => self.rk4(phase, x, alg),
        }
    }

    fn linearize(&self, phase: Phase, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> Result<Linearization<T>> {
        let (jacobian, k_map) = self.model.jacobians(phase, x, alg).reduced()?;
        let n = jacobian.nrows();
        let iteration = (DMatrix::identity(n, n) - &jacobian * (self.h * lit(0.5))).lu();
        Ok(Linearization {
            jacobian,
            k_map,
            iteration,
        })
    }

    /// Factorized iteration matrix at a converged point, logged if asked.
    fn chord_at(&mut self, phase: Phase, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> Result<LU<T, Dyn, Dyn>> {
        let lin = self.linearize(phase, x, alg)?;
        let lu = lin.iteration.clone();
        if self.options.record_linearizations && phase == Phase::PostFault {
            self.log.push(lin);
        }
        self.chord = Some((phase, lu.clone()));
        Ok(lu)
    }

    fn trapezoidal(
        &mut self,
        phase: Phase,
        x: &DVector<T>,
        alg: &AlgebraicSolution<T>,
    ) -> Result<(DVector<T>, AlgebraicSolution<T>)> {
        let model = self.model;
        let half_h = self.h * lit(0.5);
        let f_n = model.vector_field(x, alg);
        let mut lu = match &self.chord {
            Some((p, lu)) if *p == phase => lu.clone(),
            _ => self.chord_at(phase, x, alg)?,
        };
        let mut xk = x + &f_n * self.h;
        let mut alg_k = model.solve(phase, &xk, Some(alg))?;
        let tol = T::tolerance(self.options.newton_tolerance);
        let t_fail = |reason: &str| Error::Integration {
            t: f64::NAN,
            reason: reason.to_string(),
        };
        let mut converged = false;
        for it in 1..=self.options.max_newton_iterations {
            let f_k = model.vector_field(&xk, &alg_k);
            let r = &xk - x - (&f_n + &f_k) * half_h;
            let dx = lu.solve(&r).ok_or_else(|| t_fail("singular iteration matrix"))?;
            xk -= &dx;
            alg_k = model.solve(phase, &xk, Some(&alg_k))?;
            let worst = dx
                .iter()
                .zip(xk.iter())
                .fold(T::zero(), |m, (d, v)| m.max(d.abs() / (T::one() + v.abs())));
            if worst < tol {
                converged = true;
                break;
            }
            if it % self.options.jacobian_refresh == 0 {
                lu = self.linearize(phase, &xk, &alg_k)?.iteration;
            }
        }
        if !converged {
            return Err(t_fail("Newton iteration did not converge"));
        }
        self.chord_at(phase, &xk, &alg_k)?;
        Ok((xk, alg_k))
    }

    fn rk4(&mut self, phase: Phase, x: &DVector<T>, alg: &AlgebraicSolution<T>) -> Result<(DVector<T>, AlgebraicSolution<T>)> {
        let model = self.model;
        let h = self.h;
        let half = h * lit(0.5);
        let k1 = model.vector_field(x, alg);
        let x2 = x + &k1 * half;
        let a2 = model.solve(phase, &x2, Some(alg))?;
        let k2 = model.vector_field(&x2, &a2);
        let x3 = x + &k2 * half;
        let a3 = model.solve(phase, &x3, Some(&a2))?;
        let k3 = model.vector_field(&x3, &a3);
        let x4 = x + &k3 * h;
        let a4 = model.solve(phase, &x4, Some(&a3))?;
        let k4 = model.vector_field(&x4, &a4);
        let two: T = lit(2.0);
        let sixth = h / lit::<T>(6.0);
        let x_next = x + (k1 + (k2 + k3) * two + k4) * sixth;
        let a_next = model.solve(phase, &x_next, Some(&a4))?;
        Ok((x_next, a_next))
    }
}

/// Model plus scenario template, reused across clearing times. Counts the
/// simulations it runs.
#[derive(Debug)]
pub struct Study<T: Scalar> {
    pub case: NetworkCase,
    pub model: SystemModel<T>,
    pub template: FaultScenario,
    pub options: SimOptions,
    simulations: std::sync::atomic::AtomicUsize,
}

impl<T: Scalar> Study<T> {
    pub fn new(case: &NetworkCase, template: &FaultScenario, options: &SimOptions) -> Result<Self> {
        Ok(Self {
            case: case.clone(),
            model: SystemModel::new(case, template, options.omega_pu)?,
            template: template.clone(),
            options: *options,
            simulations: Default::default(),
        })
    }

    pub fn scenario(&self, t_cl_delay: f64) -> FaultScenario {
        self.template.with_clearing(t_cl_delay)
    }

    pub fn simulate(&self, t_cl_delay: f64) -> Result<Trajectory<T>> {
        self.simulate_with(t_cl_delay, &self.options)
    }

    /// As [`Study::simulate`], also keeping the post-fault linearizations.
    pub fn simulate_linearized(&self, t_cl_delay: f64) -> Result<Trajectory<T>> {
        let options = SimOptions {
            record_linearizations: true,
            ..self.options
        };
        self.simulate_with(t_cl_delay, &options)
    }

    fn simulate_with(&self, t_cl_delay: f64, options: &SimOptions) -> Result<Trajectory<T>> {
        self.simulations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        simulate_model(&self.model, &self.scenario(t_cl_delay), options)
    }

    /// Number of time-domain simulations run so far.
    pub fn simulations(&self) -> usize {
        self.simulations.load(std::sync::atomic::Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{builtin_case, BranchRef};

    fn smib_scenario(tcl: f64) -> FaultScenario {
        FaultScenario {
            t1: 0.5,
            horizon: 3.0,
            ..FaultScenario::new(1, "1-2#1".parse().unwrap(), tcl)
        }
    }

    #[test]
    fn no_fault_stays_put() {
        let case = builtin_case("ieee39_gfl2").unwrap();
        let s = FaultScenario::no_fault(2.0, 0.01);
        let traj = simulate::<f64>(&case, &s, &SimOptions::default()).unwrap();
        assert!(traj.is_complete());
        assert!(traj.switches.is_empty());
        let x0 = &traj.states[0];
        for x in &traj.states {
            assert!((x - x0).amax() < 1e-9);
        }
    }

    #[test]
    fn states_continuous_across_switches() {
        let case = builtin_case("smib").unwrap();
        let traj = simulate::<f64>(&case, &smib_scenario(0.1), &SimOptions::default()).unwrap();
        assert_eq!(traj.switches.len(), 2);
        assert_eq!(traj.fault_index, 50);
        assert_eq!(traj.clearing_index, 60);
        // bolted fault at the machine terminal: no transfer while faulted
        let during = &traj.switches[0].after;
        assert!(during.p_e_sync[0].abs() < 1e-12);
        let post = &traj.switches[1];
        assert!(post.before.p_e_sync[0].abs() < 1e-12);
        assert!(post.after.p_e_sync[0] > 0.1);
    }

    #[test]
    fn free_acceleration_during_bolted_fault() {
        // P_e = 0 while faulted: δ − δ₀ = ω₀ P_M t² / (4H) exactly for the
        // trapezoidal rule on this quadratic
        let case = builtin_case("smib").unwrap();
        let traj = simulate::<f64>(&case, &smib_scenario(0.2), &SimOptions::default()).unwrap();
        let d0 = traj.states[50][0];
        let w0 = 2.0 * std::f64::consts::PI * 60.0;
        let pm = case.sync_machines[0].p_gen;
        let h = case.sync_machines[0].h;
        for i in 50..=70 {
            let t = (i - 50) as f64 * 0.01;
            let expect = d0 + w0 * pm * t * t / (4.0 * h);
            assert!((traj.states[i][0] - expect).abs() < 1e-9, "step {i}");
        }
    }

    #[test]
    fn rk4_agrees_with_trapezoidal() {
        let case = builtin_case("ieee39_gfl2").unwrap();
        let s = FaultScenario {
            t1: 0.5,
            horizon: 4.0,
            ..FaultScenario::new(2, BranchRef::new(2, 3), 0.1)
        };
        let a = simulate::<f64>(&case, &s, &SimOptions::default()).unwrap();
        let b = simulate::<f64>(
            &case,
            &s,
            &SimOptions {
                integrator: Integrator::Rk4,
                ..SimOptions::default()
            },
        )
        .unwrap();
        assert!(a.is_complete() && b.is_complete());
        // speeds compared in pu of ω₀; in rad/s the trapezoidal O(h²) error
        // alone is about 2e-3
        let w0 = case.frequency_base();
        let l = a.layout;
        let mut worst = 0.0f64;
        for (x, y) in a.states.iter().zip(&b.states) {
            for c in 0..l.n_states() {
                let scale = if (l.omega(0)..l.omega(0) + l.n_sync).contains(&c) { w0 } else { 1.0 };
                worst = worst.max((x[c] - y[c]).abs() / scale);
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn integrator_names_round_trip() {
        for i in [Integrator::Trapezoidal, Integrator::Rk4] {
            assert_eq!(i.to_string().parse::<Integrator>().unwrap(), i);
        }
        assert!("euler".parse::<Integrator>().is_err());
    }

    #[test]
    fn study_counts_runs() {
        let case = builtin_case("smib").unwrap();
        let study = Study::<f64>::new(&case, &smib_scenario(0.1), &SimOptions::default()).unwrap();
        study.simulate(0.1).unwrap();
        study.simulate(0.2).unwrap();
        assert_eq!(study.simulations(), 2);
    }
}
