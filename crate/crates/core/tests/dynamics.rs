mod common;

use cctkit::case::{builtin_case, FaultScenario};
use cctkit::tds::{self, classify_stability, classify_with, SimOptions, StabilityCriteria};

use common::*;

/// `H/ω₀·Δω² − P_m·δ − P_max·cos δ` is a first integral of the lossless
/// post-fault SMIB.
#[test]
fn lossless_smib_conserves_energy_after_clearing() {
    let s = reference_study("smib");
    let traj = s.simulate(0.15).unwrap();
    assert!(classify_stability(&traj).unwrap().stable);
    let p_max = smib_post_fault_pmax();
    let l = traj.layout;
    let energy = |i: usize| {
        let x = &traj.states[i];
        let delta = x[l.delta(0)] - traj.infinite_angles[0];
        let w = x[l.omega(0)] - SMIB_OMEGA0;
        SMIB_H / SMIB_OMEGA0 * w * w - SMIB_PM * delta - p_max * delta.cos()
    };
    let c = traj.clearing_index;
    let w_cl = traj.states[c][l.omega(0)] - SMIB_OMEGA0;
    let injected = SMIB_H / SMIB_OMEGA0 * w_cl * w_cl;
    let drift = (c..traj.len()).map(|i| (energy(i) - energy(c)).abs()).fold(0.0, f64::max);
    assert!(drift / injected < 1e-3, "energy drift {:.3e} of {injected:.3e}", drift);
}

#[test]
fn halving_the_step_barely_moves_the_peak_angle() {
    for case in ["smib", "ieee39_gfl2"] {
        let c = builtin_case(case).unwrap();
        let (bus, branch) = reference_fault(case);
        let coarse = template(case, bus, branch).with_clearing(0.12);
        let fine = FaultScenario { dt: coarse.dt / 2.0, ..coarse.clone() };
        let peak = |sc: &FaultScenario| {
            tds::simulate::<f64>(&c, sc, &SimOptions::default())
                .unwrap()
                .max_angle_spread()
        };
        let (a, b) = (peak(&coarse), peak(&fine));
        assert!((a - b).abs() / b < 5e-3, "{case}: {a} vs {b}");
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let c = builtin_case("smib").unwrap();
    let sc = smib_template().with_clearing(0.15);
    let lo = SimOptions {
        newton_tolerance: 1e-5,
        ..SimOptions::default()
    };
    let a = tds::simulate::<f32>(&c, &sc, &lo).unwrap();
    let b = tds::simulate::<f64>(&c, &sc, &SimOptions::default()).unwrap();
    assert_eq!(a.len(), b.len());
    let worst = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x[0] as f64 - y[0]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "angle gap {worst}");
    assert_eq!(
        classify_stability(&a).unwrap().stable,
        classify_stability(&b).unwrap().stable
    );
}

fn sweep(case: &str) -> Vec<(f64, tds::Trajectory<f64>)> {
    let s = reference_study(case);
    (0..20)
        .map(|k| {
            let t = 0.05 + 0.02 * k as f64;
            (t, s.simulate(t).unwrap())
        })
        .collect()
}

#[test]
fn verdict_is_monotone_in_clearing_time() {
    for case in ["ieee39_sync", "ieee39_gfl2"] {
        let verdicts: Vec<bool> = sweep(case)
            .iter()
            .map(|(_, tr)| classify_stability(tr).unwrap().stable)
            .collect();
        let first_unstable = verdicts.iter().position(|s| !s).expect("sweep reaches instability");
        assert!(first_unstable > 0, "{case}: unstable from the start");
        assert!(verdicts[first_unstable..].iter().all(|s| !s), "{case}: {verdicts:?}");
    }
}

#[test]
fn verdicts_survive_halved_and_raised_thresholds() {
    let default = StabilityCriteria::default();
    for case in ["ieee39_sync", "ieee39_gfl2"] {
        for (t, tr) in sweep(case) {
            let v = classify_with(&tr, &default).unwrap().stable;
            for f in [0.5, 1.5] {
                assert_eq!(
                    classify_with(&tr, &default.scaled(f)).unwrap().stable,
                    v,
                    "{case} at {t:.2} s with thresholds ×{f}"
                );
            }
        }
    }
}

#[test]
fn rk4_and_trapezoidal_agree() {
    let c = builtin_case("ieee39_gfl2").unwrap();
    let (bus, branch) = reference_fault("ieee39_gfl2");
    let sc = FaultScenario {
        horizon: 3.0,
        ..template("ieee39_gfl2", bus, branch).with_clearing(0.12)
    };
    let trap = tds::simulate::<f64>(&c, &sc, &SimOptions::default()).unwrap();
    let rk4 = tds::simulate::<f64>(
        &c,
        &sc,
        &SimOptions {
            integrator: tds::Integrator::Rk4,
            ..SimOptions::default()
        },
    )
    .unwrap();
    let (a, b) = (trap.max_angle_spread(), rk4.max_angle_spread());
    assert!((a - b).abs() / b < 1e-2, "{a} vs {b}");
}
