mod common;

use cctkit::case::builtin_case;
use cctkit::sensitivity::{relative_l2, sensitivity_finite_difference, sensitivity_variational, Alignment};
use cctkit::tds::{Integrator, SimOptions};
use cctkit::Study;

use common::*;

const T_CL: f64 = 0.10;

#[test]
fn finite_differences_converge_at_second_order() {
    let s = reference_study("ieee39_gfl2");
    let fd: Vec<_> = [1, 2, 4]
        .into_iter()
        .map(|m| sensitivity_finite_difference(&s, T_CL, m, Alignment::Elapsed).unwrap())
        .collect();
    let ratio = relative_l2(&fd[2], &fd[1], 2.0) / relative_l2(&fd[1], &fd[0], 2.0);
    assert!((3.5..=4.5).contains(&ratio), "Richardson factor {ratio:.2}");
}

/// The variational trajectory is the `h → 0` limit: the finite-difference
/// error against it shrinks fourfold per halving of `h`.
#[test]
fn variational_is_the_limit_of_finite_differences() {
    let s = reference_study("ieee39_gfl2");
    let var = sensitivity_variational(&s.model, &s.simulate_linearized(T_CL).unwrap(), Alignment::Elapsed).unwrap();
    let err: Vec<f64> = [1, 2]
        .into_iter()
        .map(|m| relative_l2(&sensitivity_finite_difference(&s, T_CL, m, Alignment::Elapsed).unwrap(), &var, 2.0))
        .collect();
    assert!(err[0] < 0.01, "{err:?}");
    assert!((3.5..=4.5).contains(&(err[1] / err[0])), "{err:?}");
}

#[test]
fn rk4_and_trapezoidal_sensitivities_agree() {
    let c = builtin_case("ieee39_gfl2").unwrap();
    let (bus, branch) = reference_fault("ieee39_gfl2");
    let sens = |integrator| {
        let s = Study::new(
            &c,
            &template("ieee39_gfl2", bus, branch),
            &SimOptions {
                integrator,
                ..SimOptions::default()
            },
        )
        .unwrap();
        sensitivity_variational(&s.model, &s.simulate_linearized(T_CL).unwrap(), Alignment::Elapsed).unwrap()
    };
    let (trap, rk4) = (sens(Integrator::Trapezoidal), sens(Integrator::Rk4));
    let err = relative_l2(&trap, &rk4, 2.0);
    assert!(err < 0.02, "{err:.4}");
}
