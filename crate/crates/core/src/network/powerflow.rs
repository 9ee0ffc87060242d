//! Newton–Raphson AC power flow in polar coordinates, used to place the
//! system at its pre-fault equilibrium.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use super::assemble;
use crate::case::{BusKind, NetworkCase};
use crate::error::{Error, Result};
use crate::scalar::{cabs, carg, lit, polar, to_f64, Scalar};

pub const PF_TOLERANCE: f64 = 1e-10;
pub const PF_MAX_ITERATIONS: usize = 50;

/// Converged bus voltages and net injections (generation minus load), all
/// in case bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T: Scalar> {
    pub voltage: Vec<Complex<T>>,
    pub p_injection: Vec<T>,
    pub q_injection: Vec<T>,
    pub iterations: usize,
    pub mismatch: T,
}

impl<T: Scalar> PowerFlowSolution<T> {
    pub fn v_mag(&self, pos: usize) -> T {
        cabs(self.voltage[pos])
    }

    pub fn v_ang(&self, pos: usize) -> T {
        carg(self.voltage[pos])
    }

    /// Generation at a bus: net injection plus the bus load.
    pub fn generation(&self, case: &NetworkCase, pos: usize) -> Complex<T> {
        let (pl, ql) = case.bus_load(case.buses[pos].index);
        Complex::new(self.p_injection[pos] + lit(pl), self.q_injection[pos] + lit(ql))
    }

    /// Active power dissipated in branch series resistances.
    pub fn branch_losses(&self, case: &NetworkCase) -> T {
        let mut loss = T::zero();
        for br in case.branches.iter().filter(|b| b.in_service) {
            let f = case.bus_position(br.from_bus).expect("validated case");
            let t = case.bus_position(br.to_bus).expect("validated case");
            let ys = Complex::new(T::one(), T::zero()) / Complex::new(lit::<T>(br.r), lit::<T>(br.x));
            let vf = self.voltage[f] / lit::<T>(br.tap);
            let i = (vf - self.voltage[t]) * ys;
            loss += lit::<T>(br.r) * (i * i.conj()).re;
        }
        loss
    }
}

/// Scheduled injections from the case: machine dispatch (or converter
/// reference) minus load.
fn scheduled<T: Scalar>(case: &NetworkCase) -> (Vec<T>, Vec<T>) {
    let n = case.buses.len();
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for (i, b) in case.buses.iter().enumerate() {
        let (pl, ql) = case.bus_load(b.index);
        p[i] -= lit(pl);
        q[i] -= lit(ql);
    }
    for m in &case.sync_machines {
        let i = case.bus_position(m.bus).expect("validated case");
        p[i] += lit(m.p_gen);
    }
    for g in &case.gfl_units {
        let i = case.bus_position(g.bus).expect("validated case");
        p[i] += lit(g.p_vs);
    }
    (p, q)
}

pub fn initial_power_flow<T: Scalar>(case: &NetworkCase) -> Result<PowerFlowSolution<T>> {
    let n = case.buses.len();
    let y = assemble::<T>(case, None);
    let (p_spec, q_spec) = scheduled::<T>(case);

    let mut vm: Vec<T> = case
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Slack | BusKind::Pv => lit(b.v_setpoint),
            BusKind::Pq => T::one(),
        })
        .collect();
    let mut va = vec![T::zero(); n];

    let pvpq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let (n_a, n_m) = (pvpq.len(), pq.len());
    let tol = T::tolerance(PF_TOLERANCE);

    let voltages = |vm: &[T], va: &[T]| -> DVector<Complex<T>> {
        DVector::from_iterator(n, (0..n).map(|i| polar(vm[i], va[i])))
    };

    let mut mismatch = T::zero();
    for iteration in 0..=PF_MAX_ITERATIONS {
        let v = voltages(&vm, &va);
        let i_bus = &y * &v;
        let s: Vec<Complex<T>> = (0..n).map(|k| v[k] * i_bus[k].conj()).collect();

        let mut f = DVector::zeros(n_a + n_m);
        for (r, &k) in pvpq.iter().enumerate() {
            f[r] = s[k].re - p_spec[k];
        }
        for (r, &k) in pq.iter().enumerate() {
            f[n_a + r] = s[k].im - q_spec[k];
        }
        mismatch = f.amax();
        if mismatch < tol {
            return Ok(PowerFlowSolution {
                p_injection: s.iter().map(|z| z.re).collect(),
                q_injection: s.iter().map(|z| z.im).collect(),
                voltage: v.iter().copied().collect(),
                iterations: iteration,
                mismatch,
            });
        }
        if iteration == PF_MAX_ITERATIONS {
            break;
        }

        // dS/dVa = j diag(V) conj(diag(I) − Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let jj = Complex::new(T::zero(), T::one());
        let mut ds_da = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        let mut ds_dm = ds_da.clone();
        for r in 0..n {
            for c in 0..n {
                let ydv = y[(r, c)] * v[c];
                let unit_c = v[c] / Complex::new(vm[c], T::zero());
                let mut da = -(ydv.conj());
                if r == c {
                    da += i_bus[r].conj();
                }
                ds_da[(r, c)] = jj * v[r] * da;
                let mut dm = v[r] * (y[(r, c)] * unit_c).conj();
                if r == c {
                    dm += i_bus[r].conj() * unit_c;
                }
                ds_dm[(r, c)] = dm;
            }
        }
        let dim = n_a + n_m;
        let mut jac = DMatrix::zeros(dim, dim);
        for (r, &k) in pvpq.iter().enumerate() {
            for (c, &m) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_da[(k, m)].re;
            }
            for (c, &m) in pq.iter().enumerate() {
                jac[(r, n_a + c)] = ds_dm[(k, m)].re;
            }
        }
        for (r, &k) in pq.iter().enumerate() {
            for (c, &m) in pvpq.iter().enumerate() {
                jac[(n_a + r, c)] = ds_da[(k, m)].im;
            }
            for (c, &m) in pq.iter().enumerate() {
                jac[(n_a + r, n_a + c)] = ds_dm[(k, m)].im;
            }
        }
        let dx = jac.lu().solve(&(-f)).ok_or(Error::PowerFlowDiverged {
            iterations: iteration,
            mismatch: to_f64(mismatch),
        })?;
        for (r, &k) in pvpq.iter().enumerate() {
            va[k] += dx[r];
        }
        for (r, &k) in pq.iter().enumerate() {
            vm[k] += dx[n_a + r];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: PF_MAX_ITERATIONS,
        mismatch: to_f64(mismatch),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::builtin_case;

    #[test]
    fn smib_matches_two_bus_closed_form() {
        let case = builtin_case("smib").unwrap();
        let pf = initial_power_flow::<f64>(&case).unwrap();
        // slack angle 0, two parallel x = 0.5 lines → X = 0.25
        assert_eq!(pf.v_ang(1), 0.0);
        let delta = pf.v_ang(0);
        let p = pf.v_mag(0) * pf.v_mag(1) / 0.25 * delta.sin();
        assert!((p - 0.8).abs() < 1e-10);
        assert!((pf.p_injection[0] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn flat_unloaded_network() {
        let mut case = builtin_case("smib").unwrap();
        case.sync_machines[0].p_gen = 0.0;
        let pf = initial_power_flow::<f64>(&case).unwrap();
        for z in &pf.voltage {
            assert!((z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn ieee39_gfl2_balances() {
        let case = builtin_case("ieee39_gfl2").unwrap();
        let pf = initial_power_flow::<f64>(&case).unwrap();
        assert!(pf.mismatch < 1e-8);
        let total_gen: f64 = (0..case.buses.len()).map(|i| pf.generation(&case, i).re).sum();
        let total_load: f64 = case.buses.iter().map(|b| case.bus_load(b.index).0).sum();
        let losses = pf.branch_losses(&case);
        assert!((total_gen - total_load - losses).abs() < 1e-6, "{total_gen} {total_load} {losses}");
        // converters inject no reactive power
        for g in &case.gfl_units {
            let i = case.bus_position(g.bus).unwrap();
            assert!(pf.generation(&case, i).im.abs() < 1e-8);
        }
    }
}
