#![allow(dead_code)]

use std::f64::consts::PI;

use cctkit::case::{builtin_case, BranchRef, FaultScenario};
use cctkit::network::Phase;
use cctkit::system::{JacobianBlocks, SystemModel};
use cctkit::tds::SimOptions;
use cctkit::Study;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BUNDLED: [&str; 3] = ["smib", "ieee39_sync", "ieee39_gfl2"];

/// Fault and tripped line used for each bundled case.
pub fn reference_fault(case: &str) -> (usize, BranchRef) {
    match case {
        "smib" => (1, "1-2#1".parse().unwrap()),
        _ => (2, BranchRef::new(2, 3)),
    }
}

/// SMIB runs are short: a lossless machine never settles, and loss of
/// synchronism shows within a couple of seconds.
pub fn smib_template() -> FaultScenario {
    FaultScenario {
        t1: 1.0,
        horizon: 5.0,
        ..FaultScenario::new(1, "1-2#1".parse().unwrap(), 0.1)
    }
}

pub fn template(case: &str, bus: usize, branch: BranchRef) -> FaultScenario {
    if case == "smib" {
        FaultScenario {
            fault_bus: Some(bus),
            tripped_branch: Some(branch),
            ..smib_template()
        }
    } else {
        FaultScenario::new(bus, branch, 0.1)
    }
}

pub fn study(case: &str, bus: usize, branch: BranchRef) -> Study {
    let c = builtin_case(case).unwrap();
    Study::new(&c, &template(case, bus, branch), &SimOptions::default()).unwrap()
}

pub fn reference_study(case: &str) -> Study {
    let (bus, branch) = reference_fault(case);
    study(case, bus, branch)
}

/// Bundled SMIB data: `P_m = 0.8`, `H = 5`, `x'_d = 0.2`, two parallel
/// 0.5 pu lines to a 1 pu infinite bus, 60 Hz.
pub const SMIB_PM: f64 = 0.8;
pub const SMIB_H: f64 = 5.0;
pub const SMIB_XD: f64 = 0.2;
pub const SMIB_XLINE: f64 = 0.5;
pub const SMIB_OMEGA0: f64 = 2.0 * PI * 60.0;

/// Internal EMF magnitude and initial rotor angle, with terminal voltage
/// held at 1 pu.
pub fn smib_emf() -> (f64, f64) {
    let x_pre = SMIB_XLINE / 2.0;
    let v1 = Complex64::from_polar(1.0, (SMIB_PM * x_pre).asin());
    let i = (v1 - 1.0) / Complex64::new(0.0, x_pre);
    let e = v1 + Complex64::new(0.0, SMIB_XD) * i;
    (e.norm(), e.arg())
}

/// Peak electrical power with one line tripped.
pub fn smib_post_fault_pmax() -> f64 {
    smib_emf().0 / (SMIB_XD + SMIB_XLINE)
}

/// Equal-area critical clearing time for a bolted fault at the machine
/// terminal cleared by tripping one line.
pub fn equal_area_cct() -> f64 {
    let delta0 = smib_emf().1;
    let p_max = smib_post_fault_pmax();
    let delta_max = PI - (SMIB_PM / p_max).asin();
    let cos_cr = delta_max.cos() + SMIB_PM * (delta_max - delta0) / p_max;
    let delta_cr = cos_cr.acos();
    (4.0 * SMIB_H * (delta_cr - delta0) / (SMIB_OMEGA0 * SMIB_PM)).sqrt()
}

/// States and algebraic vectors scattered around the equilibrium.
pub fn random_points(model: &SystemModel<f64>, n: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let l = model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = model.devices.y_vector(&model.y0);
    (0..n)
        .map(|_| {
            let mut x = model.x0.clone();
            for i in 0..l.n_sync {
                x[l.delta(i)] += rng.random_range(-0.8..0.8);
                x[l.omega(i)] += rng.random_range(-2.0..2.0);
            }
            for k in 0..l.n_gfl {
                x[l.x_v(k)] += rng.random_range(-0.05..0.05);
                x[l.p_v(k)] += rng.random_range(-0.5..0.5);
                x[l.theta_p(k)] += rng.random_range(-0.5..0.5);
                x[l.x_p(k)] += rng.random_range(-0.2..0.2);
            }
            let mut y = y0.clone();
            for i in 0..l.n_sync {
                y[l.p_e(i)] += rng.random_range(-0.5..0.5);
            }
            for k in 0..l.n_gfl {
                y[l.v(k)] = rng.random_range(0.4..1.2);
                y[l.theta(k)] += rng.random_range(-0.5..0.5);
            }
            (x, y)
        })
        .collect()
}

fn central<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, at: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, at.len());
    for j in 0..at.len() {
        let h = 1e-6 * (1.0 + at[j].abs());
        let (mut p, mut q) = (at.clone(), at.clone());
        p[j] += h;
        q[j] -= h;
        m.set_column(j, &((f(&p) - f(&q)) / (2.0 * h)));
    }
    m
}

/// Central finite differences of the vector field and the algebraic residual.
pub fn fd_blocks(model: &SystemModel<f64>, phase: Phase, x: &DVector<f64>, y: &DVector<f64>) -> JacobianBlocks<f64> {
    let d = &model.devices;
    let net = model.network(phase);
    let (n, m) = (x.len(), y.len());
    JacobianBlocks {
        px: central(|x| d.rhs(x, y), x, n),
        py: central(|y| d.rhs(x, y), y, n),
        sx: central(|x| d.residual(net, x, y), x, m),
        sy: central(|y| d.residual(net, x, y), y, m),
    }
}

/// Largest entry error relative to the block's largest entry, floored at
/// 1 pu so that structurally zero blocks are judged in absolute terms.
pub fn block_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(fd.amax()).max(1.0);
    (analytic - fd).amax() / scale
}

/// Worst relative block error over `n` random points, cycling through the
/// three topologies.
pub fn worst_jacobian_error(case: &str, n: usize, seed: u64) -> f64 {
    worst_jacobian_error_in(&reference_study(case).model, n, seed)
}

pub fn worst_jacobian_error_in(model: &SystemModel<f64>, n: usize, seed: u64) -> f64 {
    let phases = [Phase::PreFault, Phase::DuringFault, Phase::PostFault];
    random_points(model, n, seed)
        .iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let phase = phases[k % 3];
            let a = model.devices.jacobian_blocks(model.network(phase), x, y);
            let f = fd_blocks(model, phase, x, y);
            [
                block_error(&a.px, &f.px),
                block_error(&a.py, &f.py),
                block_error(&a.sx, &f.sx),
                block_error(&a.sy, &f.sy),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
