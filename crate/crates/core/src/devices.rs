//! Device differential equations: classical synchronous machine and
//! grid-following converter with virtual inertia and a PI phase-locked loop.

use serde::{Deserialize, Serialize};

use crate::case::{GflParams, SyncMachineParams};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SyncState<T> {
    /// Rotor angle (rad).
    pub delta: T,
    /// Rotor speed: rad/s, or pu when the frame uses per-unit speed.
    pub omega: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GflState<T> {
    /// Virtual-inertia filter state, pu frequency deviation.
    pub x_v: T,
    pub p_v: T,
    pub theta_p: T,
    pub x_p: T,
}

/// Frequency conventions shared by every device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame<T> {
    /// Synchronous speed ω₀ (rad/s).
    pub omega0: T,
    /// Store machine speed in pu instead of rad/s.
    pub omega_pu: bool,
}

impl<T: Scalar> Frame<T> {
    pub fn new(frequency_hz: f64, omega_pu: bool) -> Self {
        Self {
            omega0: lit(2.0 * std::f64::consts::PI * frequency_hz),
            omega_pu,
        }
    }

    /// Rotor speed at synchronism in the chosen unit.
    pub fn synchronous_speed(&self) -> T {
        if self.omega_pu {
            T::one()
        } else {
            self.omega0
        }
    }
}

/// Machine parameters in working precision on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncDevice<T> {
    pub h: T,
    /// Damping in pu power per pu speed deviation.
    pub d: T,
    pub xd_prime: T,
    pub p_m: T,
    pub e_mag: T,
}

impl<T: Scalar> SyncDevice<T> {
    pub fn new(params: &SyncMachineParams, p_m: f64, e_mag: f64) -> Self {
        Self {
            h: lit(params.h),
            d: lit(params.d),
            xd_prime: lit(params.xd_prime),
            p_m: lit(p_m),
            e_mag: lit(e_mag),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflDevice<T> {
    pub p_vs: T,
    pub t_v: T,
    pub t_p: T,
    pub h_v: T,
    pub k_p: T,
    pub k_i: T,
    pub v_floor: T,
}

impl<T: Scalar> From<&GflParams> for GflDevice<T> {
    fn from(g: &GflParams) -> Self {
        Self {
            p_vs: lit(g.p_vs),
            t_v: lit(g.t_v),
            t_p: lit(g.t_p),
            h_v: lit(g.h_v),
            k_p: lit(g.k_p),
            k_i: lit(g.k_i),
            v_floor: lit(g.v_floor),
        }
    }
}

/// Swing equation. Returns `(dδ/dt, dω/dt)`.
///
/// With speed in rad/s: `dδ/dt = ω − ω₀`,
/// `dω/dt = ω₀/(2H)·(P_M − P_e − D·(ω − ω₀)/ω₀)`.
pub fn sync_derivatives<T: Scalar>(state: &SyncState<T>, p_e: T, dev: &SyncDevice<T>, frame: &Frame<T>) -> (T, T) {
    let two_h = dev.h + dev.h;
    if frame.omega_pu {
        let slip = state.omega - T::one();
        (frame.omega0 * slip, (dev.p_m - p_e - dev.d * slip) / two_h)
    } else {
        let slip = state.omega - frame.omega0;
        (
            slip,
            frame.omega0 / two_h * (dev.p_m - p_e - dev.d * slip / frame.omega0),
        )
    }
}

/// PLL quadrature voltage and frequency output `(v_q, ω_P)`.
pub fn pll_signals<T: Scalar>(state: &GflState<T>, v: T, theta: T, dev: &GflDevice<T>) -> (T, T) {
    let v_q = v * (theta - state.theta_p).sin();
    (v_q, dev.k_p * v_q + dev.k_i * state.x_p)
}

/// Converter dynamics `(dx_v, dP_v, dθ_P, dx_P)` with `θ_P` as an absolute
/// angle, so `dθ_P/dt = ω_P + ω₀`.
pub fn gfl_derivatives<T: Scalar>(
    state: &GflState<T>,
    v: T,
    theta: T,
    dev: &GflDevice<T>,
    frame: &Frame<T>,
) -> [T; 4] {
    let mut d = gfl_derivatives_relative(state, v, theta, dev, frame);
    d[2] += frame.omega0;
    d
}

/// As [`gfl_derivatives`] but with `θ_P` measured in the synchronous frame,
/// which is how the system model stores it.
pub fn gfl_derivatives_relative<T: Scalar>(
    state: &GflState<T>,
    v: T,
    theta: T,
    dev: &GflDevice<T>,
    frame: &Frame<T>,
) -> [T; 4] {
    let (v_q, omega_p) = pll_signals(state, v, theta, dev);
    let dx_v = (omega_p / frame.omega0 - state.x_v) / dev.t_v;
    let two_hv = dev.h_v + dev.h_v;
    let dp_v = (dev.p_vs - two_hv * dx_v - state.p_v) / dev.t_p;
    [dx_v, dp_v, omega_p, v_q]
}

/// Partials of the converter equations with respect to
/// `[x_v, P_v, θ_P, x_P]` (rows follow [`gfl_derivatives`]) and `[V, θ]`.
pub fn gfl_partials<T: Scalar>(
    state: &GflState<T>,
    v: T,
    theta: T,
    dev: &GflDevice<T>,
    frame: &Frame<T>,
) -> ([[T; 4]; 4], [[T; 2]; 4]) {
    let (s, c) = (theta - state.theta_p).sin_cos();
    let z = T::zero();
    // v_q and ω_P gradients over [x_v, P_v, θ_P, x_P, V, θ]
    let vq = [z, z, -v * c, z, s, v * c];
    let wp: [T; 6] = std::array::from_fn(|i| dev.k_p * vq[i] + if i == 3 { dev.k_i } else { z });
    let xv: [T; 6] = std::array::from_fn(|i| wp[i] / (frame.omega0 * dev.t_v) - if i == 0 { T::one() / dev.t_v } else { z });
    let two_hv = dev.h_v + dev.h_v;
    let pv: [T; 6] = std::array::from_fn(|i| (-two_hv * xv[i] - if i == 1 { T::one() } else { z }) / dev.t_p);
    let rows = [xv, pv, wp, vq];
    let dx = std::array::from_fn(|r| std::array::from_fn(|c| rows[r][c]));
    let dy = std::array::from_fn(|r| [rows[r][4], rows[r][5]]);
    (dx, dy)
}
