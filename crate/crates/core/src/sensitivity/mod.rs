//! Post-fault trajectory sensitivities `W = ∂x/∂T_cl`, `U = ∂y/∂T_cl` and the
//! fleet sensitivity norms built from them.

mod norms;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use norms::{default_gfl_reference, peak, sensitivity_csv, sn_gfl, sn_sync, Fleet, Peak, SnSeries, SyncReference};

use crate::error::{Error, Result};
use crate::network::Phase;
use crate::scalar::{lit, Scalar};
use crate::system::{Layout, SystemModel};
use crate::tds::{Integrator, Study, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    #[default]
    Variational,
    FiniteDifference,
}

impl FromStr for SensitivityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" => Ok(Self::Variational),
            "fd" | "finite_difference" => Ok(Self::FiniteDifference),
            other => Err(Error::Invalid(format!(
                "unknown sensitivity method `{other}` (expected variational or fd)"
            ))),
        }
    }
}

impl fmt::Display for SensitivityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Variational => "variational",
            Self::FiniteDifference => "fd",
        })
    }
}

/// Time axis on which `∂/∂T_cl` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Fixed time since clearing; `W(0) = P₁(x_cl, y_cl⁻)`.
    #[default]
    Elapsed,
    /// Fixed absolute time; `W(0⁺) = P₁ − P₂` at the clearing state.
    Absolute,
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elapsed" => Ok(Self::Elapsed),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::Invalid(format!(
                "unknown alignment `{other}` (expected elapsed or absolute)"
            ))),
        }
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Elapsed => "elapsed",
            Self::Absolute => "absolute",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOptions {
    pub method: SensitivityMethod,
    pub alignment: Alignment,
    /// Finite-difference half step in multiples of `dt`.
    pub fd_steps: usize,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            method: SensitivityMethod::Variational,
            alignment: Alignment::Elapsed,
            fd_steps: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityTrajectory<T: Scalar> {
    /// Time since clearing (s).
    pub elapsed: Vec<f64>,
    pub w: Vec<DVector<T>>,
    pub u: Vec<DVector<T>>,
    pub method: SensitivityMethod,
    pub alignment: Alignment,
    /// Clearing delay of the base run (s).
    pub base_t_cl: f64,
    pub layout: Layout,
    /// Set when a run ended early and the window was shortened.
    pub truncated: bool,
}

impl<T: Scalar> SensitivityTrajectory<T> {
    pub fn len(&self) -> usize {
        self.elapsed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elapsed.is_empty()
    }

    /// Samples with `elapsed ≤ until`.
    pub fn window_len(&self, until: f64) -> usize {
        self.elapsed.iter().take_while(|s| **s <= until + 1e-9).count()
    }
}

/// Integrates the variational equations along the post-fault part of `traj`
/// with the integrator that produced it.
///
/// For the trapezoidal rule the update
/// `(I − h/2·J_{n+1})·W_{n+1} = (I + h/2·J_n)·W_n` is the exact derivative
/// of the discrete step; for RK4 the stage derivatives are propagated.
/// `U = −S_y⁻¹·S_x·W` at every sample.
pub fn sensitivity_variational<T: Scalar>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    alignment: Alignment,
) -> Result<SensitivityTrajectory<T>> {
    let c = traj.clearing_index;
    let t_cl = traj.scenario.t_cl_delay;
    if traj.len() <= c {
        return Err(Error::ProbeFailed {
            t_cl,
            reason: "the run ends before the fault is cleared".into(),
        });
    }
    let sw = traj.switch_at(c).ok_or_else(|| Error::ProbeFailed {
        t_cl,
        reason: "no clearing event on the trajectory".into(),
    })?;
    let x_cl = &traj.states[c];
    let p1 = model.vector_field(x_cl, &sw.before);
    let mut w = match alignment {
        Alignment::Elapsed => p1,
        Alignment::Absolute => p1 - model.vector_field(x_cl, &sw.after),
    };

    let h: T = lit(traj.scenario.dt);
    let half = h * lit(0.5);
    let n = traj.layout.n_states();
    let eye = DMatrix::<T>::identity(n, n);
    let phase = Phase::PostFault;
    // Linearizations kept by the simulation are reused when complete.
    let stored = (traj.options.integrator == Integrator::Trapezoidal
        && traj.linearizations.len() == traj.len() - c)
        .then_some(&traj.linearizations);
    let (mut jac, mut k_map) = match stored {
        Some(l) => (l[0].jacobian.clone(), l[0].k_map.clone()),
        None => model.jacobians(phase, x_cl, &traj.algebraics[c]).reduced()?,
    };

    let mut out = SensitivityTrajectory {
        elapsed: Vec::with_capacity(traj.len() - c),
        w: Vec::with_capacity(traj.len() - c),
        u: Vec::with_capacity(traj.len() - c),
        method: SensitivityMethod::Variational,
        alignment,
        base_t_cl: t_cl,
        layout: traj.layout,
        truncated: !traj.is_complete(),
    };
    out.elapsed.push(0.0);
    out.u.push(&k_map * &w);
    out.w.push(w.clone());

    for i in c..traj.len() - 1 {
        let x_next = &traj.states[i + 1];
        let alg_next = &traj.algebraics[i + 1];
        match traj.options.integrator {
            Integrator::Trapezoidal => {
                let rhs = &w + &jac * &w * half;
                let singular = || Error::Integration {
                    t: traj.times[i + 1],
                    reason: "singular variational iteration matrix".into(),
                };
                match stored {
                    Some(l) => {
                        let next = &l[i + 1 - c];
                        w = next.iteration.solve(&rhs).ok_or_else(singular)?;
                        jac.copy_from(&next.jacobian);
                        k_map.copy_from(&next.k_map);
                    }
                    None => {
                        let (jac_next, k_next) = model.jacobians(phase, x_next, alg_next).reduced()?;
                        w = (&eye - &jac_next * half).lu().solve(&rhs).ok_or_else(singular)?;
                        jac = jac_next;
                        k_map = k_next;
                    }
                }
            }
            Integrator::Rk4 => {
                w = rk4_variational(model, &traj.states[i], &traj.algebraics[i], &w, h, &jac)?;
                let (jac_next, k_next) = model.jacobians(phase, x_next, alg_next).reduced()?;
                jac = jac_next;
                k_map = k_next;
            }
        }
        out.elapsed.push((i + 1 - c) as f64 * traj.scenario.dt);
        out.u.push(&k_map * &w);
        out.w.push(w.clone());
    }
    Ok(out)
}

/// Derivative of one RK4 step (with the algebraic solve at each stage) in
/// the direction `w`.
fn rk4_variational<T: Scalar>(
    model: &SystemModel<T>,
    x: &DVector<T>,
    alg: &crate::network::AlgebraicSolution<T>,
    w: &DVector<T>,
    h: T,
    jac1: &DMatrix<T>,
) -> Result<DVector<T>> {
    let phase = Phase::PostFault;
    let half = h * lit(0.5);
    let k1 = model.vector_field(x, alg);
    let d1 = jac1 * w;
    let x2 = x + &k1 * half;
    let a2 = model.solve(phase, &x2, Some(alg))?;
    let (j2, _) = model.jacobians(phase, &x2, &a2).reduced()?;
    let k2 = model.vector_field(&x2, &a2);
    let d2 = &j2 * (w + &d1 * half);
    let x3 = x + &k2 * half;
    let a3 = model.solve(phase, &x3, Some(&a2))?;
    let (j3, _) = model.jacobians(phase, &x3, &a3).reduced()?;
    let k3 = model.vector_field(&x3, &a3);
    let d3 = &j3 * (w + &d2 * half);
    let x4 = x + &k3 * h;
    let a4 = model.solve(phase, &x4, Some(&a3))?;
    let (j4, _) = model.jacobians(phase, &x4, &a4).reduced()?;
    let d4 = &j4 * (w + &d3 * h);
    let two: T = lit(2.0);
    let sixth = h / lit::<T>(6.0);
    Ok(w + (d1 + (d2 + d3) * two + d4) * sixth)
}

/// Central differences of two runs with clearing delays `T_cl ± m·dt`.
///
/// With elapsed alignment the runs are compared at equal time since their
/// own clearing; with absolute alignment at equal absolute time, starting
/// once both runs are cleared.
pub fn sensitivity_finite_difference<T: Scalar>(
    study: &Study<T>,
    t_cl: f64,
    steps: usize,
    alignment: Alignment,
) -> Result<SensitivityTrajectory<T>> {
    let dt = study.template.dt;
    if steps == 0 {
        return Err(Error::Invalid("finite-difference step must be at least one dt".into()));
    }
    let h = steps as f64 * dt;
    if t_cl - h <= 0.5 * dt {
        return Err(Error::ProbeFailed {
            t_cl,
            reason: format!("T_cl − h = {:.4} s leaves no faulted interval", t_cl - h),
        });
    }
    let (plus, minus) = std::thread::scope(|s| {
        let p = s.spawn(|| study.simulate(t_cl + h));
        let m = study.simulate(t_cl - h);
        (p.join().expect("simulation thread panicked"), m)
    });
    let (plus, minus) = (plus?, minus?);
    let model = &study.model;
    let scale: T = lit(1.0 / (2.0 * h));
    let (cp, cm) = (plus.clearing_index, minus.clearing_index);
    let base_c = minus.clearing_index + steps;

    let (start_p, start_m, offset) = match alignment {
        Alignment::Elapsed => (cp, cm, 0),
        Alignment::Absolute => (cp, cp, cp - base_c),
    };
    let count = plus.len().saturating_sub(start_p).min(minus.len().saturating_sub(start_m));
    if count == 0 {
        return Err(Error::ProbeFailed {
            t_cl,
            reason: "perturbed runs end before clearing".into(),
        });
    }
    let mut out = SensitivityTrajectory {
        elapsed: Vec::with_capacity(count),
        w: Vec::with_capacity(count),
        u: Vec::with_capacity(count),
        method: SensitivityMethod::FiniteDifference,
        alignment,
        base_t_cl: t_cl,
        layout: plus.layout,
        truncated: plus.collapse.is_some() || minus.collapse.is_some(),
    };
    for k in 0..count {
        let (ip, im) = (start_p + k, start_m + k);
        out.elapsed.push((k + offset) as f64 * dt);
        out.w.push((&plus.states[ip] - &minus.states[im]) * scale);
        let yp = model.devices.y_vector(&plus.algebraics[ip]);
        let ym = model.devices.y_vector(&minus.algebraics[im]);
        out.u.push((yp - ym) * scale);
    }
    Ok(out)
}

/// Relative L2 discrepancy `‖a − b‖ / ‖b‖` over samples with
/// `elapsed ≤ until`, matched by elapsed time.
pub fn relative_l2<T: Scalar>(a: &SensitivityTrajectory<T>, b: &SensitivityTrajectory<T>, until: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, s) in b.elapsed.iter().enumerate() {
        if *s > until + 1e-9 {
            break;
        }
        let Some(i) = a.elapsed.iter().position(|t| (t - s).abs() < 1e-9) else {
            continue;
        };
        for (x, y) in a.w[i].iter().zip(b.w[k].iter()) {
            let (x, y) = (crate::scalar::to_f64(*x), crate::scalar::to_f64(*y));
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}
