use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use cctkit::case::{builtin_case, load_case, BranchRef, CaseFormat, FaultScenario, NetworkCase};
use cctkit::cct::{
    auto_probes, compare_with_tds, estimate_cct, table_row, CctEstimate, EstimateOptions, Report, TABLE_HEADER,
};
use cctkit::sensitivity::{
    default_gfl_reference, peak, sensitivity_csv, sensitivity_finite_difference, sensitivity_variational, sn_gfl,
    sn_sync, SensitivityMethod, SensitivityOptions, SyncReference,
};
use cctkit::tds::{self, bisect_with, classify_stability, write_trajectory, SimOptions};
use cctkit::Study;

use crate::output::{self, document};
use crate::{
    BisectArgs, CaseArgs, CctArgs, FaultArgs, SensitivityArgs, SensitivityFlags, SimulateArgs, SweepArgs, TimingArgs,
};

const EXIT_STABLE: u8 = 0;
const EXIT_UNSTABLE: u8 = 2;

/// A path, then `<dir>/<name>` and `<dir>/<name>.json`, then a built-in.
pub fn resolve_case(args: &CaseArgs) -> Result<NetworkCase> {
    let direct = Path::new(&args.case);
    if direct.is_file() {
        return load_case(direct, CaseFormat::Json).map_err(Into::into);
    }
    if let Some(dir) = &args.case_dir {
        for candidate in [dir.join(&args.case), dir.join(format!("{}.json", args.case))] {
            if candidate.is_file() {
                return load_case(&candidate, CaseFormat::Json).map_err(Into::into);
            }
        }
    }
    builtin_case(&args.case).with_context(|| format!("no case file `{}` and no built-in of that name", args.case))
}

fn sim_options(t: &TimingArgs) -> SimOptions {
    SimOptions {
        integrator: t.integrator,
        omega_pu: t.omega_pu,
        ..SimOptions::default()
    }
}

fn scenario(fault_bus: Option<usize>, trip: Option<BranchRef>, tcl: f64, t: &TimingArgs) -> Result<FaultScenario> {
    let s = FaultScenario {
        fault_bus,
        tripped_branch: trip,
        t1: t.t1,
        t_cl_delay: tcl,
        horizon: t.horizon,
        dt: t.dt,
    };
    s.validate()?;
    Ok(s)
}

fn study(case_args: &CaseArgs, fault: &FaultArgs, timing: &TimingArgs) -> Result<(NetworkCase, Study)> {
    let case = resolve_case(case_args)?;
    let template = scenario(Some(fault.fault_bus), Some(fault.trip), 0.1, timing)?;
    let study = Study::new(&case, &template, &sim_options(timing))?;
    Ok((case, study))
}

fn estimate_options(flags: &SensitivityFlags) -> EstimateOptions {
    EstimateOptions {
        sensitivity: SensitivityOptions {
            method: flags.method,
            alignment: flags.alignment,
            fd_steps: flags.fd_steps,
        },
        ..EstimateOptions::default()
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<u8> {
    let case = resolve_case(&a.case)?;
    let scenario = scenario(a.fault_bus, a.trip, a.tcl, &a.timing)?;
    let options = sim_options(&a.timing);
    let traj = tds::simulate::<f64>(&case, &scenario, &options)?;
    let verdict = classify_stability(&traj)?;

    let out = &a.output.out;
    output::prepare(out)?;
    write_trajectory(&traj, out, a.output.format.csv(), a.output.format.json())?;
    let summary = json!({
        "case": case.name,
        "scenario": scenario,
        "integrator": options.integrator,
        "samples": traj.len(),
        "complete": traj.is_complete(),
        "collapse": traj.collapse,
        "max_angle_spread": traj.max_angle_spread(),
        "verdict": verdict,
    });
    output::write(out, "summary.json", &document(summary, Value::Null)?)?;
    if a.output.plot {
        output::write(
            out,
            "trajectory.gp",
            &output::trajectory_plot(traj.layout.n_sync, traj.layout.n_gfl),
        )?;
    }
    if verdict.stable {
        println!("stable");
        Ok(EXIT_STABLE)
    } else {
        match verdict.first_violation_time {
            Some(t) => println!("unstable: {} at t = {t:.2} s", verdict.reason),
            None => println!("unstable: {}", verdict.reason),
        }
        Ok(EXIT_UNSTABLE)
    }
}

pub fn sensitivity(a: &SensitivityArgs) -> Result<u8> {
    let (case, study) = study(&a.case, &a.fault, &a.timing)?;
    let sens = match a.sens.method {
        SensitivityMethod::Variational => {
            let traj = study.simulate_linearized(a.tcl)?;
            sensitivity_variational(&study.model, &traj, a.sens.alignment)?
        }
        SensitivityMethod::FiniteDifference => {
            sensitivity_finite_difference(&study, a.tcl, a.sens.fd_steps, a.sens.alignment)?
        }
    };
    let sync = sn_sync(&sens, SyncReference::default_for(&case))?;
    let gfl = default_gfl_reference(&case).map(|k| sn_gfl(&sens, k)).transpose()?;
    let sync_peak = peak(&sync, None)?;
    let gfl_peak = gfl.as_ref().map(|g| peak(g, None)).transpose()?;

    let out = &a.output.out;
    output::prepare(out)?;
    if a.output.format.csv() {
        output::write(out, "sensitivity.csv", &sensitivity_csv(&sens, &sync, gfl.as_ref()))?;
    }
    if a.output.format.json() {
        let body = json!({
            "case": case.name,
            "scenario": study.scenario(a.tcl),
            "method": sens.method,
            "alignment": sens.alignment,
            "truncated": sens.truncated,
            "state_names": sens.layout.state_names(),
            "elapsed": sens.elapsed,
            "sn_sg": { "reference": sync.reference, "values": sync.values, "peak": sync_peak },
            "sn_ag": gfl.as_ref().map(|g| json!({ "reference": g.reference, "values": g.values, "peak": gfl_peak })),
        });
        output::write(out, "sensitivity.json", &document(body, Value::Null)?)?;
    }
    if a.output.plot {
        output::write(
            out,
            "sensitivity.gp",
            &output::sensitivity_plot(sens.layout.n_states(), gfl.is_some()),
        )?;
    }
    println!("m(SN_SG) = {:.6}  lambda = {:.6e}", sync_peak.value, 1.0 / sync_peak.value);
    if let Some(p) = gfl_peak {
        println!("m(SN_AG) = {:.6}  lambda = {:.6e}", p.value, 1.0 / p.value);
    }
    if sens.truncated {
        eprintln!("warning: a run ended early; the sensitivity window is shortened");
    }
    Ok(EXIT_STABLE)
}

fn lambda_csv(estimate: &CctEstimate) -> String {
    let mut s = String::from("fleet,t_cl,m_sn,lambda,peak_elapsed\n");
    for f in estimate.fleets() {
        for p in &f.points {
            s.push_str(&format!("{},{},{},{},{}\n", p.fleet, p.t_cl, p.m_sn, p.lambda, p.peak_elapsed));
        }
    }
    s
}

fn lambda_lines(estimate: &CctEstimate) -> Vec<(String, f64, f64)> {
    estimate
        .fleets()
        .map(|f| (f.fleet.to_string(), f.extrapolation.slope, f.extrapolation.t_cr))
        .collect()
}

pub fn cct(a: &CctArgs) -> Result<u8> {
    let (case, study) = study(&a.case, &a.fault, &a.timing)?;
    let options = estimate_options(&a.sens);
    let selection = match a.probes {
        Some(_) => None,
        None => Some(auto_probes(&study, a.bracket.1)?),
    };
    let probes = a.probes.or(selection.as_ref().map(|s| s.probes)).expect("one of the two is set");
    let (estimate, report) = if a.compare {
        let r = compare_with_tds(&study, probes, a.bracket, a.tol, &options)?;
        (r.estimate.clone(), Some(r))
    } else {
        (estimate_cct(&study, probes, &options)?, None)
    };

    let out = &a.output.out;
    output::prepare(out)?;
    let bus = a.fault.fault_bus.to_string();
    let line = a.fault.trip.to_string();
    let row = table_row(
        &bus,
        &line,
        report.as_ref().map(|r| (r.bracket.lower, r.bracket.upper)),
        &format!("{:.4}", estimate.t_cr_system),
    );
    let text = format!("{TABLE_HEADER}\n{row}\n");
    output::write(out, "cct.txt", &text)?;
    if a.output.format.json() {
        let body = json!({
            "case": case.name,
            "fault_bus": a.fault.fault_bus,
            "tripped_branch": a.fault.trip,
            "probe_selection": selection,
            "estimate": estimate,
            "comparison": report.as_ref().map(|r| json!({
                "bracket": r.bracket,
                "tolerance": r.tolerance,
                "within_bracket": r.within_bracket,
                "estimate_simulations": r.estimate_simulations,
                "bisection_simulations": r.bisection_simulations,
            })),
        });
        let timing = json!({
            "estimate_seconds": estimate.seconds,
            "bisection_seconds": report.as_ref().map(|r| r.bisection_seconds),
        });
        output::write(out, "cct.json", &document(body, timing)?)?;
    }
    if a.output.format.csv() {
        output::write(out, "lambda.csv", &lambda_csv(&estimate))?;
    }
    if a.output.plot {
        output::write(out, "lambda.gp", &output::lambda_plot(&lambda_lines(&estimate)))?;
    }
    print!("{text}");
    for f in estimate.fleets() {
        println!(
            "{}: T_cr = {:.4} s (slope {:.4e} 1/s, {:.3} s past the last probe)",
            f.fleet, f.extrapolation.t_cr, f.extrapolation.slope, f.extrapolation.distance
        );
    }
    if let Some(r) = &report {
        println!(
            "simulations: {} (estimate) vs {} (bisection); estimate {} the bracket",
            r.estimate_simulations,
            r.bisection_simulations,
            if r.within_bracket { "inside" } else { "outside" }
        );
    }
    if estimate.low_confidence {
        eprintln!("warning: the extrapolation reaches far past the probes; the estimate is low confidence");
    }
    Ok(EXIT_STABLE)
}

pub fn bisect(a: &BisectArgs) -> Result<u8> {
    let (case, study) = study(&a.case, &a.fault, &a.timing)?;
    let started = std::time::Instant::now();
    let bracket = bisect_with(&study, a.bracket, a.tol)?;
    let seconds = started.elapsed().as_secs_f64();

    let out = &a.output.out;
    output::prepare(out)?;
    if a.output.format.json() {
        let body = json!({
            "case": case.name,
            "fault_bus": a.fault.fault_bus,
            "tripped_branch": a.fault.trip,
            "tolerance": a.tol,
            "bracket": bracket,
        });
        output::write(out, "bracket.json", &document(body, json!({ "bisection_seconds": seconds }))?)?;
    }
    if a.output.format.csv() {
        let mut s = String::from("t_cl,stable,reason,first_violation_time\n");
        for step in &bracket.log {
            let v = step.verdict;
            s.push_str(&format!(
                "{},{},{},{}\n",
                step.t_cl,
                v.stable,
                v.reason,
                v.first_violation_time.map(|t| t.to_string()).unwrap_or_default()
            ));
        }
        output::write(out, "bisect.csv", &s)?;
    }
    println!(
        "CCT in [{:.4}, {:.4}] s after {} simulations",
        bracket.lower, bracket.upper, bracket.evaluations
    );
    Ok(EXIT_STABLE)
}

struct SweepRow {
    bus: usize,
    branch: BranchRef,
    outcome: Result<Report>,
}

fn sweep_one(case: &NetworkCase, a: &SweepArgs, bus: usize, branch: &BranchRef) -> Result<Report> {
    let template = scenario(Some(bus), Some(*branch), 0.1, &a.timing)?;
    let study = Study::new(case, &template, &sim_options(&a.timing))?;
    let probes = match a.probes {
        Some(p) => p,
        None => auto_probes(&study, a.bracket.1)?.probes,
    };
    compare_with_tds(&study, probes, a.bracket, a.tol, &estimate_options(&a.sens)).map_err(Into::into)
}

const SWEEP_COLUMNS: &str = "fault_bus,tripped_line,tds_lower,tds_upper,cct_proposed,cct_sync,cct_gfl,\
selected,probe_a,probe_b,within_bracket,contained,low_confidence,estimate_simulations,bisection_simulations,error";

fn sweep_csv_line(row: &SweepRow, tol: f64) -> String {
    match &row.outcome {
        Ok(r) => {
            let e = &r.estimate;
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
                row.bus,
                row.branch,
                r.bracket.lower,
                r.bracket.upper,
                e.t_cr_system,
                e.t_cr_sync(),
                e.t_cr_gfl().map(|t| t.to_string()).unwrap_or_default(),
                e.selected,
                e.probes.0,
                e.probes.1,
                r.within_bracket,
                r.bracket.contains(e.t_cr_system, tol),
                e.low_confidence,
                r.estimate_simulations,
                r.bisection_simulations,
            )
        }
        Err(err) => {
            let msg = format!("{err:#}").replace(['"', '\n'], " ");
            format!("{},{},,,,,,,,,,,,,,\"{msg}\"", row.bus, row.branch)
        }
    }
}

pub fn sweep(a: &SweepArgs) -> Result<u8> {
    let case = resolve_case(&a.case)?;
    if a.tol <= 0.0 {
        bail!("--tol must be positive");
    }
    let out = &a.output.out;
    output::prepare(out)?;

    let rows: Vec<SweepRow> = std::thread::scope(|s| {
        let handles: Vec<_> = a
            .faults
            .iter()
            .map(|(bus, branch)| {
                let case = &case;
                s.spawn(move || SweepRow {
                    bus: *bus,
                    branch: *branch,
                    outcome: sweep_one(case, a, *bus, branch),
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });

    let mut text = format!("{TABLE_HEADER}\n");
    let mut csv = format!("{SWEEP_COLUMNS}\n");
    let mut faults = Vec::new();
    let mut timing = Vec::new();
    for row in &rows {
        let (bus, line) = (row.bus.to_string(), row.branch.to_string());
        let circuit = row.branch.circuit.map(|c| format!("_c{c}")).unwrap_or_default();
        let name = format!("fault_{}_{}-{}{circuit}.json", row.bus, row.branch.from, row.branch.to);
        let (entry, row_text) = match &row.outcome {
            Ok(r) => {
                timing.push(json!({
                    "fault_bus": row.bus,
                    "tripped_branch": row.branch,
                    "estimate_seconds": r.estimate_seconds,
                    "bisection_seconds": r.bisection_seconds,
                }));
                (serde_json::to_value(r)?, r.table_row())
            }
            Err(e) => (
                json!({ "fault_bus": row.bus, "tripped_branch": row.branch, "error": format!("{e:#}") }),
                table_row(&bus, &line, None, "error"),
            ),
        };
        if a.output.format.json() {
            output::write(out, &name, &document(entry.clone(), Value::Null)?)?;
        }
        faults.push(entry);
        text.push_str(&row_text);
        text.push('\n');
        csv.push_str(&sweep_csv_line(row, a.tol));
        csv.push('\n');
    }
    output::write(out, "sweep.txt", &text)?;
    if a.output.format.csv() {
        output::write(out, "sweep.csv", &csv)?;
    }
    if a.output.format.json() {
        let body = json!({ "case": case.name, "tolerance": a.tol, "faults": faults });
        output::write(out, "sweep.json", &document(body, Value::Array(timing))?)?;
    }
    print!("{text}");
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} faults failed; see the error column", rows.len());
    }
    Ok(EXIT_STABLE)
}
