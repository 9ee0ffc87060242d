//! Critical clearing time from two sensitivity probes, and the comparison
//! against time-domain bisection.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::case::{snap_to_grid, BranchRef};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sensitivity::{
    default_gfl_reference, peak, sensitivity_finite_difference, sensitivity_variational, sn_gfl, sn_sync, Fleet,
    Peak, SensitivityMethod, SensitivityOptions, SensitivityTrajectory, SyncReference,
};
use crate::tds::{bisect_with, classify_stability, CctBracket, Study};

/// Extrapolations reaching further than this past the last probe are flagged.
pub const LOW_CONFIDENCE_DISTANCE: f64 = 0.15;
/// Spacing of automatically chosen probes.
pub const DEFAULT_PROBE_SPACING: f64 = 0.02;
/// Bisection tolerance used when comparing against the estimate.
pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub t_cl: f64,
    pub m_sn: f64,
    pub lambda: f64,
    pub fleet: Fleet,
    /// Time since clearing at which the peak occurred (s).
    pub peak_elapsed: f64,
}

impl LambdaPoint {
    /// `λ = 1 / m(SN)`.
    pub fn new(t_cl: f64, m_sn: f64, fleet: Fleet) -> Result<Self> {
        if m_sn == 0.0 {
            return Err(Error::ZeroSensitivity);
        }
        if !(m_sn > 0.0 && m_sn.is_finite()) {
            return Err(Error::ProbeFailed {
                t_cl,
                reason: format!("peak sensitivity norm is {m_sn}"),
            });
        }
        Ok(Self {
            t_cl,
            m_sn,
            lambda: 1.0 / m_sn,
            fleet,
            peak_elapsed: 0.0,
        })
    }

    fn from_peak(t_cl: f64, p: Peak, fleet: Fleet) -> Result<Self> {
        Ok(Self {
            peak_elapsed: p.elapsed,
            ..Self::new(t_cl, p.value, fleet)?
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub t_cr: f64,
    /// dλ/dT_cl of the secant (1/s).
    pub slope: f64,
    /// `t_cr` minus the later probe (s).
    pub distance: f64,
}

/// Root of the line through two `(T_cl, λ)` points. The order of the points
/// does not matter.
pub fn extrapolate_root(p1: &LambdaPoint, p2: &LambdaPoint) -> Result<Extrapolation> {
    if p1.fleet != p2.fleet {
        return Err(Error::Extrapolation(format!(
            "points belong to different fleets ({} and {})",
            p1.fleet, p2.fleet
        )));
    }
    let (a, b) = if p1.t_cl <= p2.t_cl { (p1, p2) } else { (p2, p1) };
    if a.t_cl == b.t_cl {
        return Err(Error::Extrapolation(format!("both probes are at T_cl = {}", a.t_cl)));
    }
    if a.lambda == b.lambda {
        return Err(Error::Extrapolation(format!(
            "λ is {} at both probes; the line never meets the axis",
            a.lambda
        )));
    }
    let slope = (b.lambda - a.lambda) / (b.t_cl - a.t_cl);
    if slope > 0.0 {
        return Err(Error::Extrapolation(format!(
            "{} λ increases with T_cl (slope {slope:.4e}); the probes are not approaching a stability margin",
            a.fleet
        )));
    }
    let t_cr = a.t_cl - a.lambda / slope;
    Ok(Extrapolation {
        t_cr,
        slope,
        distance: t_cr - b.t_cl,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetEstimate {
    pub fleet: Fleet,
    pub reference: SnReference,
    pub points: [LambdaPoint; 2],
    pub extrapolation: Extrapolation,
}

/// Angle reference used for a fleet's norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnReference {
    Sync(SyncReference),
    Gfl(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctEstimate {
    pub probes: (f64, f64),
    pub sync: FleetEstimate,
    pub gfl: Option<FleetEstimate>,
    pub t_cr_system: f64,
    pub selected: Fleet,
    pub low_confidence: bool,
    pub simulations: usize,
    pub method: SensitivityMethod,
    /// Wall-clock time of the estimate (s). Not serialized, so reports of
    /// identical runs are identical.
    #[serde(skip)]
    pub seconds: f64,
}

impl CctEstimate {
    pub fn t_cr_sync(&self) -> f64 {
        self.sync.extrapolation.t_cr
    }

    pub fn t_cr_gfl(&self) -> Option<f64> {
        self.gfl.map(|g| g.extrapolation.t_cr)
    }

    pub fn fleets(&self) -> impl Iterator<Item = &FleetEstimate> {
        std::iter::once(&self.sync).chain(self.gfl.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub sensitivity: SensitivityOptions,
    /// Elapsed-time window of the peak search; the whole post-fault record
    /// when `None`.
    pub peak_window: Option<(f64, f64)>,
    pub sync_reference: Option<SyncReference>,
    pub gfl_reference: Option<usize>,
}

/// Sensitivities of one stable probe.
fn probe<T: Scalar>(study: &Study<T>, t_cl: f64, options: &SensitivityOptions) -> Result<SensitivityTrajectory<T>> {
    let traj = match options.method {
        SensitivityMethod::Variational => study.simulate_linearized(t_cl)?,
        SensitivityMethod::FiniteDifference => study.simulate(t_cl)?,
    };
    let verdict = classify_stability(&traj)?;
    if !verdict.stable {
        return Err(Error::ProbeFailed {
            t_cl,
            reason: format!(
                "the run is unstable ({}); lower the probe",
                verdict.reason
            ),
        });
    }
    match options.method {
        SensitivityMethod::Variational => sensitivity_variational(&study.model, &traj, options.alignment),
        SensitivityMethod::FiniteDifference => {
            sensitivity_finite_difference(study, t_cl, options.fd_steps, options.alignment)
        }
    }
}

fn references<T: Scalar>(study: &Study<T>, options: &EstimateOptions) -> (SyncReference, Option<usize>) {
    let case = &study.case;
    let sync = options.sync_reference.unwrap_or_else(|| SyncReference::default_for(case));
    let gfl = if case.gfl_units.is_empty() {
        None
    } else {
        options.gfl_reference.or_else(|| default_gfl_reference(case))
    };
    (sync, gfl)
}

fn lambda_points<T: Scalar>(
    sens: &SensitivityTrajectory<T>,
    t_cl: f64,
    sync_ref: SyncReference,
    gfl_ref: Option<usize>,
    window: Option<(f64, f64)>,
) -> Result<(LambdaPoint, Option<LambdaPoint>)> {
    let sync = LambdaPoint::from_peak(t_cl, peak(&sn_sync(sens, sync_ref)?, window)?, Fleet::Sync)?;
    let gfl = gfl_ref
        .map(|k| LambdaPoint::from_peak(t_cl, peak(&sn_gfl(sens, k)?, window)?, Fleet::Gfl))
        .transpose()?;
    Ok((sync, gfl))
}

/// `λ` of one fleet at a single clearing delay.
pub fn lambda_at<T: Scalar>(study: &Study<T>, t_cl: f64, fleet: Fleet, options: &EstimateOptions) -> Result<LambdaPoint> {
    let (sync_ref, gfl_ref) = references(study, options);
    if fleet == Fleet::Gfl && gfl_ref.is_none() {
        return Err(Error::Invalid("the case has no grid-following converters".into()));
    }
    let sens = probe(study, t_cl, &options.sensitivity)?;
    let (s, g) = lambda_points(&sens, t_cl, sync_ref, gfl_ref, options.peak_window)?;
    Ok(match fleet {
        Fleet::Sync => s,
        Fleet::Gfl => g.expect("checked above"),
    })
}

/// Fleet with the smaller root; the machines win a tie.
pub fn select_fleet<'a>(sync: &'a FleetEstimate, gfl: Option<&'a FleetEstimate>) -> &'a FleetEstimate {
    match gfl {
        Some(g) if g.extrapolation.t_cr < sync.extrapolation.t_cr => g,
        _ => sync,
    }
}

/// Two-probe estimate: both probes are simulated concurrently, every fleet's
/// `λ` line is extrapolated to zero and the smallest root is the system CCT
/// (the machines win a tie).
pub fn estimate_cct<T: Scalar>(study: &Study<T>, probes: (f64, f64), options: &EstimateOptions) -> Result<CctEstimate> {
    let dt = study.template.dt;
    let (a, b) = (snap_to_grid(probes.0, dt), snap_to_grid(probes.1, dt));
    let (a, b) = (a.min(b), a.max(b));
    if a == b {
        return Err(Error::Extrapolation(format!(
            "probes {} and {} coincide on the {dt} s grid",
            probes.0, probes.1
        )));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Invalid(format!("probes must be positive, got ({a}, {b})")));
    }
    let started = Instant::now();
    let before = study.simulations();
    let (sa, sb) = std::thread::scope(|s| {
        let ha = s.spawn(|| probe(study, a, &options.sensitivity));
        let rb = probe(study, b, &options.sensitivity);
        (ha.join().expect("probe thread panicked"), rb)
    });
    let (sa, sb) = (sa?, sb?);
    let (sync_ref, gfl_ref) = references(study, options);
    let (sync_a, gfl_a) = lambda_points(&sa, a, sync_ref, gfl_ref, options.peak_window)?;
    let (sync_b, gfl_b) = lambda_points(&sb, b, sync_ref, gfl_ref, options.peak_window)?;

    let sync = FleetEstimate {
        fleet: Fleet::Sync,
        reference: SnReference::Sync(sync_ref),
        points: [sync_a, sync_b],
        extrapolation: extrapolate_root(&sync_a, &sync_b)?,
    };
    let gfl = match (gfl_a, gfl_b, gfl_ref) {
        (Some(pa), Some(pb), Some(k)) => Some(FleetEstimate {
            fleet: Fleet::Gfl,
            reference: SnReference::Gfl(k),
            points: [pa, pb],
            extrapolation: extrapolate_root(&pa, &pb)?,
        }),
        _ => None,
    };
    let selected = *select_fleet(&sync, gfl.as_ref());
    let low_confidence = selected.extrapolation.distance > LOW_CONFIDENCE_DISTANCE;
    Ok(CctEstimate {
        probes: (a, b),
        sync,
        gfl,
        t_cr_system: selected.extrapolation.t_cr,
        selected: selected.fleet,
        low_confidence,
        simulations: study.simulations() - before,
        method: options.sensitivity.method,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Outcome of the exploratory sweep behind automatic probe selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSelection {
    pub probes: (f64, f64),
    /// Smallest unstable clearing delay found (s).
    pub upper_bound: f64,
    pub simulations: usize,
}

/// Picks probes `(b − 0.06, b − 0.04)` where `b` is an unstable clearing
/// delay at most 0.025 s above the CCT. `b` is found on a 0.1 s grid up to
/// `max_t_cl`, then refined with three points at 0.025 s spacing.
pub fn auto_probes<T: Scalar>(study: &Study<T>, max_t_cl: f64) -> Result<ProbeSelection> {
    let dt = study.template.dt;
    let before = study.simulations();
    let stable = |t: f64| -> Result<bool> { Ok(classify_stability(&study.simulate(t)?)?.stable) };
    let mut coarse = None;
    let mut k = 1;
    while k as f64 * 0.1 <= max_t_cl + 1e-9 {
        let t = snap_to_grid(k as f64 * 0.1, dt);
        if !stable(t)? {
            coarse = Some(t);
            break;
        }
        k += 1;
    }
    let coarse = coarse.ok_or_else(|| {
        Error::Invalid(format!(
            "every clearing delay up to {max_t_cl} s is stable; give probes explicitly"
        ))
    })?;
    let mut b = coarse;
    for j in 1..=3 {
        let t = snap_to_grid(coarse - 0.1 + 0.025 * j as f64, dt);
        if t <= 0.0 {
            continue;
        }
        if !stable(t)? {
            b = t;
            break;
        }
    }
    let probes = (
        snap_to_grid(b - 0.06, dt),
        snap_to_grid(b - 0.06 + DEFAULT_PROBE_SPACING, dt),
    );
    if probes.0 <= 0.0 {
        return Err(Error::Invalid(format!(
            "the system is unstable already at T_cl = {b} s; no room for probes"
        )));
    }
    Ok(ProbeSelection {
        probes,
        upper_bound: b,
        simulations: study.simulations() - before,
    })
}

/// Estimate next to the bisection oracle, with costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub case: String,
    pub fault_bus: Option<usize>,
    pub tripped_branch: Option<BranchRef>,
    pub estimate: CctEstimate,
    pub bracket: CctBracket,
    pub tolerance: f64,
    /// Estimate lies in `[lower, upper + tolerance]`.
    pub within_bracket: bool,
    pub estimate_simulations: usize,
    pub bisection_simulations: usize,
    #[serde(skip)]
    pub estimate_seconds: f64,
    #[serde(skip)]
    pub bisection_seconds: f64,
}

impl Report {
    /// Bisection wall clock over estimate wall clock.
    pub fn speedup(&self) -> f64 {
        self.bisection_seconds / self.estimate_seconds
    }

    pub fn fault_label(&self) -> (String, String) {
        (
            self.fault_bus.map_or("-".into(), |b| b.to_string()),
            self.tripped_branch.as_ref().map_or("-".into(), |b| b.to_string()),
        )
    }

    pub fn table_row(&self) -> String {
        let (bus, line) = self.fault_label();
        table_row(
            &bus,
            &line,
            Some((self.bracket.lower, self.bracket.upper)),
            &format!("{:.4}", self.estimate.t_cr_system),
        )
    }
}

/// One line of the fixed-layout table; `tds` is the bisection bracket.
pub fn table_row(bus: &str, line: &str, tds: Option<(f64, f64)>, proposed: &str) -> String {
    let tds = tds.map_or("-".into(), |(a, b)| format!("[{a:.2}, {b:.2}]"));
    format!("{bus:>9}  {line:>12}  {tds:>16}  {proposed:>21}")
}

pub const TABLE_HEADER: &str = "Fault Bus  Tripped Line         CCT (TDS)  CCT (Proposed Method)";

/// Fixed-layout text table with one row per report.
pub fn table<'a>(reports: impl IntoIterator<Item = &'a Report>) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.table_row());
        out.push('\n');
    }
    out
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&table([self]))
    }
}

/// Runs [`estimate_cct`] and [`bisect_with`] on the same study.
pub fn compare_with_tds<T: Scalar>(
    study: &Study<T>,
    probes: (f64, f64),
    bracket: (f64, f64),
    tol: f64,
    options: &EstimateOptions,
) -> Result<Report> {
    let estimate = estimate_cct(study, probes, options)?;
    let started = Instant::now();
    let before = study.simulations();
    let bracket = bisect_with(study, bracket, tol)?;
    let bisection_seconds = started.elapsed().as_secs_f64();
    let bisection_simulations = study.simulations() - before;
    let t = estimate.t_cr_system;
    Ok(Report {
        case: study.case.name.clone(),
        fault_bus: study.template.fault_bus,
        tripped_branch: study.template.tripped_branch,
        within_bracket: t >= bracket.lower - 1e-9 && t <= bracket.upper + tol + 1e-9,
        estimate_simulations: estimate.simulations,
        estimate_seconds: estimate.seconds,
        estimate,
        bracket,
        tolerance: tol,
        bisection_simulations,
        bisection_seconds,
    })
}

/// Clearing-delay bracket for [`compare_with_tds`] when none is given.
pub const DEFAULT_BRACKET: (f64, f64) = (0.05, 1.0);
