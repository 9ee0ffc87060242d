//! Algebraic network solve: machines are voltage sources `E′∠δ`, converters
//! are current sources `P_v / max(V, v_floor) ∠ θ_P`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use super::ReducedNetwork;
use crate::error::{Error, Result};
use crate::scalar::{cabs, carg, czero, lit, polar, to_f64, unwrap_near, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicOptions {
    /// Convergence threshold on the change of converter voltages (pu).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Apply Aitken Δ² extrapolation to the voltage magnitudes every third
    /// iterate.
    pub aitken: bool,
}

impl Default for AlgebraicOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
            aitken: true,
        }
    }
}

/// Converter quantities the network needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflInjection<T: Scalar> {
    pub p_v: T,
    pub theta_p: T,
    pub v_floor: T,
}

impl<T: Scalar> GflInjection<T> {
    pub fn current(&self, v_mag: T) -> Complex<T> {
        polar(self.p_v / v_mag.max(self.v_floor), self.theta_p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicSolution<T: Scalar> {
    /// Electrical power of each synchronous machine.
    pub p_e_sync: Vec<T>,
    /// Current injected by each machine at its internal node.
    pub i_sync: Vec<Complex<T>>,
    /// Converter terminal voltage magnitude and angle. A grounded converter
    /// reports `V = 0`, `θ = θ_P`.
    pub v_gfl: Vec<T>,
    pub theta_gfl: Vec<T>,
    pub i_gfl: Vec<Complex<T>>,
    /// `V·|I|·cos(θ − θ_P)`.
    pub p_e_gfl: Vec<T>,
    /// Voltages of the retained nodes in network order.
    pub node_voltages: Vec<Complex<T>>,
    pub iterations: usize,
    pub used_newton: bool,
}

impl<T: Scalar> AlgebraicSolution<T> {
    /// All bus voltages of the full network (case bus order).
    pub fn bus_voltages(&self, net: &ReducedNetwork<T>) -> Vec<Complex<T>> {
        net.bus_voltages(&self.node_voltages)
    }

    /// Total electrical power delivered by all sources and converters.
    pub fn total_power(&self, net: &ReducedNetwork<T>) -> T {
        let v = DVector::from_column_slice(&self.node_voltages);
        let i = &net.y_reduced * &v;
        v.iter().zip(i.iter()).fold(T::zero(), |acc, (v, i)| acc + (*v * i.conj()).re)
    }

    /// Max-norm of `Y·V − I` over the retained nodes.
    pub fn residual(&self, net: &ReducedNetwork<T>) -> T {
        let v = DVector::from_column_slice(&self.node_voltages);
        let i = &net.y_reduced * &v;
        let mut worst = T::zero();
        for (k, slot) in net.gfl_slot.iter().enumerate() {
            if let Some(s) = slot {
                worst = worst.max(cabs(i[net.n_source + s] - self.i_gfl[k]));
            }
        }
        for m in 0..net.n_sync {
            worst = worst.max(cabs(i[m] - self.i_sync[m]));
        }
        worst
    }
}

/// Solves the network for given machine EMFs and converter states.
///
/// `hint` carries the previous converter `(V, θ)`; it warm-starts the
/// iteration and keeps the reported angles continuous.
pub fn solve_algebraic<T: Scalar>(
    net: &ReducedNetwork<T>,
    emf: &[Complex<T>],
    gfl: &[GflInjection<T>],
    hint: Option<(&[T], &[T])>,
    options: &AlgebraicOptions,
) -> Result<AlgebraicSolution<T>> {
    let n_s = net.n_source;
    let n_g = net.n_gfl_active();
    let mut e_src = DVector::from_element(n_s, czero::<T>());
    for i in 0..net.n_sync {
        e_src[i] = emf[i];
    }
    for (r, v) in net.infinite_voltage.iter().enumerate() {
        e_src[net.n_sync + r] = *v;
    }
    let active: Vec<usize> = (0..gfl.len()).filter(|&k| net.gfl_slot[k].is_some()).collect();

    let mut v_g = DVector::from_element(n_g, czero::<T>());
    let mut iterations = 0;
    let mut used_newton = false;
    if n_g > 0 {
        let w = &net.y_gg_inv * (&net.y_gs * &e_src);
        let injections = |mags: &[T]| -> DVector<Complex<T>> {
            DVector::from_iterator(n_g, active.iter().enumerate().map(|(s, &k)| gfl[k].current(mags[s])))
        };
        let mut mags: Vec<T> = match hint {
            Some((v, _)) => active.iter().map(|&k| v[k].max(gfl[k].v_floor)).collect(),
            None => vec![T::one(); n_g],
        };
        let tol = T::tolerance(options.tolerance);
        let mut history: Vec<Vec<T>> = Vec::with_capacity(3);
        let mut prev = &net.y_gg_inv * injections(&mags) - &w;
        let mut converged = false;
        let mut change = T::zero();
        while iterations < options.max_iterations {
            iterations += 1;
            let mut next_mags: Vec<T> = prev.iter().map(|z| cabs(*z)).collect();
            if options.aitken {
                history.push(next_mags.clone());
                if history.len() == 3 {
                    for s in 0..n_g {
                        let (a, b, c) = (history[0][s], history[1][s], history[2][s]);
                        let denom = (c - b) - (b - a);
                        if denom.abs() > T::default_epsilon() * lit(1e3) {
                            let acc = c - (c - b) * (c - b) / denom;
                            if acc > T::zero() {
                                next_mags[s] = acc;
                            }
                        }
                    }
                    history.clear();
                }
            }
            mags = next_mags;
            let v = &net.y_gg_inv * injections(&mags) - &w;
            change = (&v - &prev).iter().fold(T::zero(), |m, z| m.max(cabs(*z)));
            prev = v;
            if change < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            let start = prev.clone();
            match newton_gfl(net, &e_src, gfl, &active, start, tol) {
                Some((v, its)) => {
                    prev = v;
                    iterations += its;
                    used_newton = true;
                }
                None => {
                    return Err(Error::AlgebraicDiverged {
                        iterations,
                        change: to_f64(change),
                    })
                }
            }
        }
        v_g = prev;
    }

    let i_src = &net.y_ss * &e_src + &net.y_sg * &v_g;
    let p_e_sync = (0..net.n_sync).map(|i| (e_src[i] * i_src[i].conj()).re).collect();
    let i_sync = (0..net.n_sync).map(|i| i_src[i]).collect();

    let mut v_gfl = vec![T::zero(); gfl.len()];
    let mut theta_gfl = vec![T::zero(); gfl.len()];
    let mut i_gfl = vec![czero::<T>(); gfl.len()];
    let mut p_e_gfl = vec![T::zero(); gfl.len()];
    for (k, inj) in gfl.iter().enumerate() {
        match net.gfl_slot[k] {
            Some(s) => {
                let v = v_g[s];
                let vm = cabs(v);
                let hint_angle = hint.map_or(inj.theta_p, |(_, th)| th[k]);
                v_gfl[k] = vm;
                theta_gfl[k] = unwrap_near(carg(v), hint_angle);
                i_gfl[k] = inj.current(vm);
                p_e_gfl[k] = (v * i_gfl[k].conj()).re;
            }
            None => {
                theta_gfl[k] = inj.theta_p;
                i_gfl[k] = inj.current(T::zero());
            }
        }
    }
    let mut node_voltages: Vec<Complex<T>> = e_src.iter().copied().collect();
    node_voltages.extend(v_g.iter().copied());

    Ok(AlgebraicSolution {
        p_e_sync,
        i_sync,
        v_gfl,
        theta_gfl,
        i_gfl,
        p_e_gfl,
        node_voltages,
        iterations,
        used_newton,
    })
}

/// Damped Newton on the converter bus equations in polar form.
fn newton_gfl<T: Scalar>(
    net: &ReducedNetwork<T>,
    e_src: &DVector<Complex<T>>,
    gfl: &[GflInjection<T>],
    active: &[usize],
    start: DVector<Complex<T>>,
    tol: T,
) -> Option<(DVector<Complex<T>>, usize)> {
    let n_g = active.len();
    let base = &net.y_gs * e_src;
    let mut mag: Vec<T> = start.iter().map(|z| cabs(*z).max(gfl[0].v_floor)).collect();
    let mut ang: Vec<T> = start.iter().map(|z| carg(*z)).collect();
    let residual = |mag: &[T], ang: &[T]| -> DVector<T> {
        let v = DVector::from_iterator(n_g, (0..n_g).map(|s| polar(mag[s], ang[s])));
        let f = &net.y_gg * v + &base;
        let mut r = DVector::zeros(2 * n_g);
        for s in 0..n_g {
            let z = f[s] - gfl[active[s]].current(mag[s]);
            r[2 * s] = z.re;
            r[2 * s + 1] = z.im;
        }
        r
    };
    for it in 1..=50 {
        let r = residual(&mag, &ang);
        let norm = r.amax();
        if norm < tol {
            let v = DVector::from_iterator(n_g, (0..n_g).map(|s| polar(mag[s], ang[s])));
            return Some((v, it));
        }
        let mut jac = DMatrix::zeros(2 * n_g, 2 * n_g);
        for s in 0..n_g {
            for l in 0..n_g {
                let dv = net.y_gg[(s, l)] * polar(T::one(), ang[l]);
                let dth = net.y_gg[(s, l)] * Complex::new(T::zero(), mag[l]) * polar(T::one(), ang[l]);
                let mut dv_total = dv;
                if s == l {
                    let inj = &gfl[active[s]];
                    if mag[s] > inj.v_floor {
                        dv_total += polar(inj.p_v / (mag[s] * mag[s]), inj.theta_p);
                    }
                }
                jac[(2 * s, 2 * l)] = dv_total.re;
                jac[(2 * s + 1, 2 * l)] = dv_total.im;
                jac[(2 * s, 2 * l + 1)] = dth.re;
                jac[(2 * s + 1, 2 * l + 1)] = dth.im;
            }
        }
        let step = jac.lu().solve(&(-&r))?;
        let mut damping = T::one();
        loop {
            let trial_mag: Vec<T> = (0..n_g).map(|s| mag[s] + damping * step[2 * s]).collect();
            let trial_ang: Vec<T> = (0..n_g).map(|s| ang[s] + damping * step[2 * s + 1]).collect();
            if trial_mag.iter().all(|m| *m > T::zero()) && residual(&trial_mag, &trial_ang).amax() < norm {
                mag = trial_mag;
                ang = trial_ang;
                break;
            }
            damping *= lit(0.5);
            if damping < lit(1e-4) {
                return None;
            }
        }
    }
    None
}
