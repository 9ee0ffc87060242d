use std::fmt;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstabilityReason {
    Converged,
    AngleSeparation,
    PllDivergence,
    AlgebraicCollapse,
}

impl fmt::Display for InstabilityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::AngleSeparation => "angle_separation",
            Self::PllDivergence => "pll_divergence",
            Self::AlgebraicCollapse => "algebraic_collapse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub reason: InstabilityReason,
    pub first_violation_time: Option<f64>,
}

impl StabilityVerdict {
    pub fn stable() -> Self {
        Self {
            stable: true,
            reason: InstabilityReason::Converged,
            first_violation_time: None,
        }
    }

    fn unstable(reason: InstabilityReason, t: f64) -> Self {
        Self {
            stable: false,
            reason,
            first_violation_time: Some(t),
        }
    }
}

/// Thresholds of the instability test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCriteria {
    /// Largest admissible spread of machine angles (rad).
    pub max_angle_separation: f64,
    /// PLL error `|θ − θ_P|` regarded as loss of lock (rad) ...
    pub pll_error: f64,
    /// ... when sustained for longer than this (s).
    pub pll_duration: f64,
}

impl Default for StabilityCriteria {
    fn default() -> Self {
        Self {
            max_angle_separation: std::f64::consts::TAU,
            pll_error: std::f64::consts::FRAC_PI_2,
            pll_duration: 0.5,
        }
    }
}

impl StabilityCriteria {
    /// All thresholds multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            max_angle_separation: self.max_angle_separation * factor,
            pll_error: self.pll_error * factor,
            pll_duration: self.pll_duration * factor,
        }
    }
}

pub fn classify_stability<T: Scalar>(traj: &Trajectory<T>) -> Result<StabilityVerdict> {
    classify_with(traj, &StabilityCriteria::default())
}

/// Earliest of: machine angle spread above the limit, sustained PLL error
/// after clearing, or an aborted run.
pub fn classify_with<T: Scalar>(traj: &Trajectory<T>, criteria: &StabilityCriteria) -> Result<StabilityVerdict> {
    let s = &traj.scenario;
    let needed = s.t_cl().min(s.horizon);
    let last = traj.times.last().copied();
    if traj.collapse.is_none() && last.is_none_or(|t| t + 0.5 * s.dt < needed) {
        return Err(Error::Invalid(format!(
            "trajectory ends at {:.4} s, before the clearing instant {:.4} s",
            last.unwrap_or(0.0),
            needed
        )));
    }

    let mut found: Option<StabilityVerdict> = None;
    let mut consider = |v: StabilityVerdict| {
        let earlier = match found {
            None => true,
            Some(f) => v.first_violation_time < f.first_violation_time,
        };
        if earlier {
            found = Some(v);
        }
    };

    let limit: T = lit(criteria.max_angle_separation);
    if let Some(i) = (0..traj.len()).find(|&i| traj.angle_spread(i) > limit) {
        consider(StabilityVerdict::unstable(InstabilityReason::AngleSeparation, traj.times[i]));
    }

    let error_limit: T = lit(criteria.pll_error);
    let l = traj.layout;
    for k in 0..l.n_gfl {
        let mut onset: Option<f64> = None;
        for i in traj.clearing_index..traj.len() {
            let err = (traj.algebraics[i].theta_gfl[k] - traj.states[i][l.theta_p(k)]).abs();
            if err > error_limit {
                let start = *onset.get_or_insert(traj.times[i]);
                if traj.times[i] - start > criteria.pll_duration + 1e-9 {
                    consider(StabilityVerdict::unstable(InstabilityReason::PllDivergence, start));
                    break;
                }
            } else {
                onset = None;
            }
        }
    }

    if let Some(c) = &traj.collapse {
        consider(StabilityVerdict::unstable(InstabilityReason::AlgebraicCollapse, c.t));
    }
    Ok(found.unwrap_or_else(StabilityVerdict::stable))
}
