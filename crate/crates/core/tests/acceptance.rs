//! Acceptance criteria. Runs as a plain binary and prints one line per
//! criterion. Failures exit non-zero only with `CCTKIT_STRICT_ACCEPTANCE`
//! set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cctkit::case::{builtin_case, BranchRef, FaultScenario};
use cctkit::cct::{auto_probes, estimate_cct, extrapolate_root, select_fleet, EstimateOptions, LambdaPoint};
use cctkit::cct::{Extrapolation, FleetEstimate, SnReference};
use cctkit::network::Phase;
use cctkit::sensitivity::{
    relative_l2, sensitivity_finite_difference, sensitivity_variational, Alignment, Fleet, SyncReference,
};
use cctkit::tds::{bisect_with, classify_stability, simulate, trajectory_csv, trajectory_json, SimOptions};

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Agreement to `digits` significant figures.
fn same_figures(a: f64, b: f64, digits: i32) -> bool {
    let exp = b.abs().log10().floor() as i32;
    (a - b).abs() <= 0.5 * 10f64.powi(exp - digits + 1)
}

fn reciprocal_peak_arithmetic() -> Outcome {
    let rows = [
        (800.5685, 0.0012491),
        (1141.4653, 0.00087607),
        (504.1394, 0.0019836),
        (619.2539, 0.0016148),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (m, lambda) in rows {
        let p = LambdaPoint::new(0.35, m, Fleet::Sync).map_err(|e| e.to_string())?;
        ok &= same_figures(p.lambda, lambda, 5);
        detail.push(format!("1/{m} = {:.5e}", p.lambda));
    }
    check(ok, detail.join(", "))
}

fn given(t: f64, lambda: f64, fleet: Fleet) -> LambdaPoint {
    LambdaPoint {
        t_cl: t,
        m_sn: 1.0 / lambda,
        lambda,
        fleet,
        peak_elapsed: 0.0,
    }
}

fn fleet(points: [LambdaPoint; 2], e: Extrapolation) -> FleetEstimate {
    FleetEstimate {
        fleet: points[0].fleet,
        reference: SnReference::Sync(SyncReference::Machine(0)),
        points,
        extrapolation: e,
    }
}

fn extrapolation_arithmetic() -> Outcome {
    let sg = [given(0.35, 0.0012491, Fleet::Sync), given(0.37, 0.00087607, Fleet::Sync)];
    let ag = [given(0.35, 0.0019836, Fleet::Gfl), given(0.37, 0.0016148, Fleet::Gfl)];
    let es = extrapolate_root(&sg[0], &sg[1]).map_err(|e| e.to_string())?;
    let eg = extrapolate_root(&ag[0], &ag[1]).map_err(|e| e.to_string())?;
    let (fs, fg) = (fleet(sg, es), fleet(ag, eg));
    let chosen = select_fleet(&fs, Some(&fg));
    let ok = (es.t_cr - 0.4171).abs() < 5e-4
        && (eg.t_cr - 0.4565).abs() < 1.5e-3
        && chosen.fleet == Fleet::Sync
        && (chosen.extrapolation.t_cr - 0.4171).abs() < 5e-4;
    check(
        ok,
        format!(
            "sync {:.4} s, gfl {:.4} s, selected {} {:.4} s",
            es.t_cr, eg.t_cr, chosen.fleet, chosen.extrapolation.t_cr
        ),
    )
}

const GFL2_FAULTS: [(usize, (usize, usize)); 5] = [(2, (2, 3)), (3, (3, 18)), (7, (7, 8)), (14, (14, 15)), (26, (26, 28))];

fn bracket_containment() -> Outcome {
    let started = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for (bus, (a, b)) in GFL2_FAULTS {
        let s = study("ieee39_gfl2", bus, BranchRef::new(a, b));
        let probes = auto_probes(&s, 1.0).map_err(|e| e.to_string())?.probes;
        let est = estimate_cct(&s, probes, &EstimateOptions::default()).map_err(|e| e.to_string())?;
        let br = bisect_with(&s, (0.05, 1.0), 0.01).map_err(|e| e.to_string())?;
        let inside = br.contains(est.t_cr_system, 0.01);
        ok &= inside;
        detail.push(format!(
            "{bus}/{a}-{b}: {:.4} in [{:.2}, {:.2}]{}",
            est.t_cr_system,
            br.lower,
            br.upper,
            if inside { "" } else { " NO" }
        ));
    }
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    detail.push(format!("{:.1} s", elapsed.as_secs_f64()));
    check(ok, detail.join("; "))
}

fn smib_oracle() -> Outcome {
    let eac = equal_area_cct();
    let s = reference_study("smib");
    let br = bisect_with(&s, (0.05, 1.0), 0.01).map_err(|e| e.to_string())?;
    let probes = auto_probes(&s, 1.0).map_err(|e| e.to_string())?.probes;
    let est = estimate_cct(&s, probes, &EstimateOptions::default()).map_err(|e| e.to_string())?;
    let ok = br.contains(eac, 0.01) && (est.t_cr_system - eac).abs() <= 0.03;
    check(
        ok,
        format!(
            "equal-area {eac:.4} s, bracket [{:.2}, {:.2}], estimate {:.4} s from probes {:?}",
            br.lower, br.upper, est.t_cr_system, probes
        ),
    )
}

fn sensitivity_equivalence() -> Outcome {
    let s = reference_study("ieee39_gfl2");
    let probes = auto_probes(&s, 1.0).map_err(|e| e.to_string())?.probes;
    let mut ok = true;
    let mut detail = Vec::new();
    for t in [probes.0, probes.1] {
        let traj = s.simulate_linearized(t).map_err(|e| e.to_string())?;
        let var = sensitivity_variational(&s.model, &traj, Alignment::Elapsed).map_err(|e| e.to_string())?;
        let fd: Vec<_> = [1, 2, 4]
            .into_iter()
            .map(|m| sensitivity_finite_difference(&s, t, m, Alignment::Elapsed))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let err = relative_l2(&var, &fd[0], 2.0);
        let richardson = relative_l2(&fd[2], &fd[1], 2.0) / relative_l2(&fd[1], &fd[0], 2.0);
        ok &= err < 0.05 && (3.5..=4.5).contains(&richardson);
        detail.push(format!(
            "T_cl {t:.2}: L2 {:.2}%, Richardson {richardson:.2} (widest pair clears at {:.2} s)",
            100.0 * err,
            t + 4.0 * s.template.dt
        ));
    }
    check(ok, detail.join("; "))
}

fn jacobian_correctness() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, case) in BUNDLED.iter().enumerate() {
        let worst = worst_jacobian_error(case, 100, 7 + k as u64);
        ok &= worst < 1e-5;
        detail.push(format!("{case} {worst:.1e}"));
    }
    check(ok, format!("worst relative block error: {}", detail.join(", ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn simulation_economy() -> Outcome {
    let s = reference_study("ieee39_gfl2");
    let sel = auto_probes(&s, 1.0).map_err(|e| e.to_string())?;
    // The exploratory sweep's last 0.1 s step is the natural 0.1 s bracket.
    let bracket = (sel.upper_bound - 0.1, sel.upper_bound);
    let opts = EstimateOptions::default();
    let (mut t_est, mut t_bis) = (Vec::new(), Vec::new());
    let (mut n_est, mut n_bis) = (0, 0);
    for _ in 0..3 {
        let before = s.simulations();
        let t0 = Instant::now();
        estimate_cct(&s, sel.probes, &opts).map_err(|e| e.to_string())?;
        t_est.push(t0.elapsed().as_secs_f64());
        n_est = s.simulations() - before;
        let t0 = Instant::now();
        n_bis = bisect_with(&s, bracket, 0.01).map_err(|e| e.to_string())?.evaluations;
        t_bis.push(t0.elapsed().as_secs_f64());
    }
    let ratio = median(t_bis) / median(t_est);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    check(
        n_est == 2 && n_bis >= 4 && ratio >= 3.0,
        format!(
            "{n_est} vs {n_bis} simulations from [{:.2}, {:.2}], wall-clock ratio {ratio:.2} on {cores} core(s)",
            bracket.0, bracket.1
        ),
    )
}

fn inverter_impact() -> Outcome {
    let sync = reference_study("ieee39_sync");
    let gfl = reference_study("ieee39_gfl2");
    let bs = bisect_with(&sync, (0.05, 1.0), 0.01).map_err(|e| e.to_string())?;
    let bg = bisect_with(&gfl, (0.05, 1.0), 0.01).map_err(|e| e.to_string())?;
    check(
        bs.lower >= bg.upper,
        format!(
            "ieee39_sync [{:.2}, {:.2}] vs ieee39_gfl2 [{:.2}, {:.2}]",
            bs.lower, bs.upper, bg.lower, bg.upper
        ),
    )
}

fn equilibrium_and_determinism() -> Outcome {
    let mut drift: f64 = 0.0;
    for case in BUNDLED {
        let c = builtin_case(case).unwrap();
        let traj = simulate::<f64>(&c, &FaultScenario::no_fault(15.0, 0.01), &SimOptions::default())
            .map_err(|e| e.to_string())?;
        for x in &traj.states {
            drift = drift.max((x - &traj.states[0]).amax());
        }
    }

    let s = reference_study("ieee39_gfl2");
    let (a, b) = (s.simulate(0.15).unwrap(), s.simulate(0.15).unwrap());
    let (ja, jb) = (trajectory_json(&a).to_string(), trajectory_json(&b).to_string());
    let identical = trajectory_csv(&a) == trajectory_csv(&b) && ja == jb;

    // Up to the earlier clearing instant both runs share one history, and
    // the state at the switch is carried over unchanged.
    let later = s.simulate(0.30).unwrap();
    let c = a.clearing_index;
    let shared = (0..=c).all(|i| a.states[i] == later.states[i]);
    let sw = a.switch_at(c).ok_or("no clearing switch")?;
    let post_ok = s
        .model
        .devices
        .residual(
            s.model.network(Phase::PostFault),
            &a.states[c],
            &s.model.devices.y_vector(&sw.after),
        )
        .amax()
        < 1e-8;
    let verdicts_same = classify_stability(&a).unwrap() == classify_stability(&b).unwrap();
    check(
        drift < 1e-6 && identical && shared && post_ok && verdicts_same,
        format!(
            "no-fault drift {drift:.1e}, byte-identical {identical}, continuity {}",
            shared && post_ok
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("reciprocal-peak arithmetic", reciprocal_peak_arithmetic),
        ("extrapolation arithmetic", extrapolation_arithmetic),
        ("bracket containment on ieee39_gfl2", bracket_containment),
        ("SMIB equal-area oracle", smib_oracle),
        ("variational vs finite-difference sensitivity", sensitivity_equivalence),
        ("Jacobian blocks vs finite differences", jacobian_correctness),
        ("simulation-count economy", simulation_economy),
        ("converters shorten the CCT", inverter_impact),
        ("equilibrium and determinism", equilibrium_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} PASS  {name} ({secs:.1} s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL  {name} ({secs:.1} s): {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        // Reported, not fatal, so the remaining test binaries still run.
        if std::env::var_os("CCTKIT_STRICT_ACCEPTANCE").is_some() {
            std::process::exit(1);
        }
    }
}
