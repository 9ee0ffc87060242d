use serde::{Deserialize, Serialize};

use super::{classify_stability, SimOptions, StabilityVerdict, Study};
use crate::case::{snap_to_grid, FaultScenario, NetworkCase};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One simulated clearing delay and its verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub t_cl: f64,
    pub verdict: StabilityVerdict,
}

/// Interval known to contain the critical clearing delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctBracket {
    /// Largest stable clearing delay tested (s).
    pub lower: f64,
    /// Smallest unstable clearing delay tested (s).
    pub upper: f64,
    pub evaluations: usize,
    pub log: Vec<BisectionStep>,
}

impl CctBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, t: f64, slack: f64) -> bool {
        t >= self.lower - slack && t <= self.upper + slack
    }
}

/// Interval-halving search for the critical clearing delay of `template`.
pub fn bisect_cct<T: Scalar>(
    case: &NetworkCase,
    template: &FaultScenario,
    bracket: (f64, f64),
    tol: f64,
    options: &SimOptions,
) -> Result<CctBracket> {
    let study = Study::<T>::new(case, template, options)?;
    bisect_with(&study, bracket, tol)
}

/// As [`bisect_cct`] on a prepared study. Both ends are simulated first; the
/// lower end must be stable and the upper one unstable. Midpoints are
/// snapped to the step grid, so the search also ends once the bracket is a
/// single step wide.
pub fn bisect_with<T: Scalar>(study: &Study<T>, bracket: (f64, f64), tol: f64) -> Result<CctBracket> {
    let dt = study.template.dt;
    let (lo, hi) = (snap_to_grid(bracket.0, dt), snap_to_grid(bracket.1, dt));
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidBracket(format!(
            "need 0 < lower < upper on the {dt} s grid, got ({}, {})",
            bracket.0, bracket.1
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidBracket(format!("tolerance must be positive, got {tol}")));
    }
    let mut log = Vec::new();
    let mut run = |t: f64| -> Result<StabilityVerdict> {
        let traj = study.simulate(t)?;
        let verdict = classify_stability(&traj)?;
        log.push(BisectionStep { t_cl: t, verdict });
        Ok(verdict)
    };
    let v_lo = run(lo)?;
    let v_hi = run(hi)?;
    match (v_lo.stable, v_hi.stable) {
        (true, false) => {}
        (true, true) => {
            return Err(Error::InvalidBracket(format!("both ends are stable ({lo}, {hi})")));
        }
        (false, false) => {
            return Err(Error::InvalidBracket(format!("both ends are unstable ({lo}, {hi})")));
        }
        (false, true) => {
            return Err(Error::InvalidBracket(format!(
                "lower end {lo} is unstable while upper end {hi} is stable"
            )));
        }
    }
    let (mut lower, mut upper) = (lo, hi);
    while upper - lower > tol + 1e-9 {
        let mid = snap_to_grid(0.5 * (lower + upper), dt);
        if mid <= lower + 1e-12 || mid >= upper - 1e-12 {
            break;
        }
        if run(mid)?.stable {
            lower = mid;
        } else {
            upper = mid;
        }
    }
    Ok(CctBracket {
        lower,
        upper,
        evaluations: log.len(),
        log,
    })
}
