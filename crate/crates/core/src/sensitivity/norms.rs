use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SensitivityTrajectory;
use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fleet {
    Sync,
    Gfl,
}

impl fmt::Display for Fleet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sync => "sync",
            Self::Gfl => "gfl",
        })
    }
}

impl FromStr for Fleet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Self::Sync),
            "gfl" => Ok(Self::Gfl),
            other => Err(Error::Invalid(format!("unknown fleet `{other}`"))),
        }
    }
}

/// Angle reference of the machine norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncReference {
    /// Machine index in the fleet.
    Machine(usize),
    /// An infinite bus; its angle does not move, so its sensitivity is zero.
    InfiniteBus,
}

impl SyncReference {
    /// The infinite bus when the case has one, else the machine with the
    /// largest inertia (lowest index on ties).
    pub fn default_for(case: &NetworkCase) -> Self {
        if case.infinite_buses().next().is_some() {
            return Self::InfiniteBus;
        }
        Self::Machine(largest(case.sync_machines.iter().map(|m| m.h)))
    }
}

impl fmt::Display for SyncReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Machine(i) => write!(f, "sync[{i}]"),
            Self::InfiniteBus => f.write_str("infinite_bus"),
        }
    }
}

fn largest(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Converter with the largest virtual inertia.
pub fn default_gfl_reference(case: &NetworkCase) -> Option<usize> {
    (!case.gfl_units.is_empty()).then(|| largest(case.gfl_units.iter().map(|g| g.h_v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnSeries {
    pub elapsed: Vec<f64>,
    pub values: Vec<f64>,
    pub fleet: Fleet,
    pub reference: String,
}

/// `SN_SG(s) = sqrt(Σᵢ (W_δᵢ − W_δⱼ)² + W_ωᵢ²)`.
pub fn sn_sync<T: Scalar>(sens: &SensitivityTrajectory<T>, reference: SyncReference) -> Result<SnSeries> {
    let l = sens.layout;
    if let SyncReference::Machine(j) = reference {
        if j >= l.n_sync {
            return Err(Error::Invalid(format!(
                "reference machine {j} does not exist ({} machines)",
                l.n_sync
            )));
        }
    }
    let values = sens
        .w
        .iter()
        .map(|w| {
            let w_ref = match reference {
                SyncReference::Machine(j) => to_f64(w[l.delta(j)]),
                SyncReference::InfiniteBus => 0.0,
            };
            (0..l.n_sync)
                .map(|i| {
                    let a = to_f64(w[l.delta(i)]) - w_ref;
                    let b = to_f64(w[l.omega(i)]);
                    a * a + b * b
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(SnSeries {
        elapsed: sens.elapsed.clone(),
        values,
        fleet: Fleet::Sync,
        reference: reference.to_string(),
    })
}

/// `SN_AG(s) = sqrt(Σᵢ W_xvᵢ² + W_xPᵢ² + W_Pvᵢ² + (W_θPᵢ − W_θPₖ)²)`.
pub fn sn_gfl<T: Scalar>(sens: &SensitivityTrajectory<T>, reference: usize) -> Result<SnSeries> {
    let l = sens.layout;
    if reference >= l.n_gfl {
        return Err(Error::Invalid(format!(
            "reference converter {reference} does not exist ({} converters)",
            l.n_gfl
        )));
    }
    let values = sens
        .w
        .iter()
        .map(|w| {
            let th_ref = to_f64(w[l.theta_p(reference)]);
            (0..l.n_gfl)
                .map(|i| {
                    let xv = to_f64(w[l.x_v(i)]);
                    let xp = to_f64(w[l.x_p(i)]);
                    let pv = to_f64(w[l.p_v(i)]);
                    let th = to_f64(w[l.theta_p(i)]) - th_ref;
                    xv * xv + xp * xp + pv * pv + th * th
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(SnSeries {
        elapsed: sens.elapsed.clone(),
        values,
        fleet: Fleet::Gfl,
        reference: format!("gfl[{reference}]"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub value: f64,
    pub elapsed: f64,
}

/// Largest value of `sn` with elapsed time inside `window` (whole record
/// when `None`).
pub fn peak(sn: &SnSeries, window: Option<(f64, f64)>) -> Result<Peak> {
    let (a, b) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    sn.elapsed
        .iter()
        .zip(&sn.values)
        .filter(|(s, _)| **s >= a - 1e-9 && **s <= b + 1e-9)
        .fold(None, |best: Option<Peak>, (s, v)| match best {
            Some(p) if p.value >= *v => Some(p),
            _ => Some(Peak { value: *v, elapsed: *s }),
        })
        .ok_or_else(|| Error::Invalid(format!("peak window ({a}, {b}) contains no samples")))
}

/// Columns `s`, every `W` component, then `SN_SG` and `SN_AG` (empty when
/// absent).
pub fn sensitivity_csv<T: Scalar>(sens: &SensitivityTrajectory<T>, sync: &SnSeries, gfl: Option<&SnSeries>) -> String {
    let mut out = String::from("s");
    for name in sens.layout.state_names() {
        let _ = write!(out, ",w_{name}");
    }
    out.push_str(",sn_sg,sn_ag\n");
    for k in 0..sens.len() {
        let _ = write!(out, "{}", sens.elapsed[k]);
        for v in sens.w[k].iter() {
            let _ = write!(out, ",{}", to_f64(*v));
        }
        let _ = write!(out, ",{},", sync.values[k]);
        if let Some(g) = gfl {
            let _ = write!(out, "{}", g.values[k]);
        }
        out.push('\n');
    }
    out
}
