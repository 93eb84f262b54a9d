mod common;

use eprnet::closedloop::{assemble, ClosedLoopSystem};
use eprnet::ddestab::{check_closed_loop, Verdict, DEFAULT_ORDER};
use eprnet::lqgsynth::{closed_loop_drift, synthesize_detailed, build_cost, LqgController};
use eprnet::par::Execution;
use eprnet::quadnet::{build_measurement_map, build_plant, build_uncontrolled_subsystems, NetworkParams};
use eprnet::scenario::{AMPLIFICATION_LOSS, CONTROL_DELAY, TRANSMISSION_DELAY};
use eprnet::solvers::spectral_abscissa;
use eprnet::spectra::{closed_loop_spectra, row_power, uncontrolled_spectra, FrequencyGrid, GridSpec};
use num_complex::Complex64;

fn loop_for(p: &NetworkParams, ctrl: &LqgController) -> ClosedLoopSystem {
    assemble(
        &build_plant(p, true).unwrap(),
        &build_measurement_map(p).unwrap(),
        ctrl,
        p,
    )
    .unwrap()
}

fn cases() -> Vec<NetworkParams> {
    let ideal = NetworkParams::ideal();
    vec![
        ideal,
        ideal.with_delays(TRANSMISSION_DELAY, CONTROL_DELAY),
        ideal.with_losses(AMPLIFICATION_LOSS, 0.95),
        ideal
            .with_losses(AMPLIFICATION_LOSS, 0.97)
            .with_delays(TRANSMISSION_DELAY, CONTROL_DELAY),
    ]
}

#[test]
fn zeroed_controller_reproduces_uncontrolled_spectra() {
    let grid = FrequencyGrid::log(1e3, 1e10, 300).unwrap();
    for p in cases() {
        let cl = loop_for(&p, &LqgController::zero());
        let pair = build_uncontrolled_subsystems(&p).unwrap();
        let c = closed_loop_spectra(&cl, &grid, Execution::Sequential).unwrap();
        let u = uncontrolled_spectra(&pair, &grid, Execution::Sequential).unwrap();
        for (i, (a, b)) in c.v_sum.iter().zip(&u.v_sum).enumerate() {
            let rel = (a - b).abs() / b;
            assert!(rel <= 1e-10, "{p:?} omega {:e}: {rel}", grid.omegas()[i]);
        }
        for (a, b) in c.v_plus.iter().zip(&u.v_plus) {
            assert!((a - b).abs() <= 1e-10 * b);
        }
    }
}

#[test]
fn doubling_noise_amplitude_quadruples_spectra() {
    let p = NetworkParams::ideal().with_delays(TRANSMISSION_DELAY, CONTROL_DELAY);
    let cl = loop_for(&p, &common::ideal_controller());
    let scaled = cl.sys.scale_inputs(2.0);
    for w in [1e3, 1e5, 1e7, 1e9] {
        for row in [0, 1] {
            let base = row_power(&cl.sys.select_outputs(&[row]).unwrap(), w).unwrap();
            let big = row_power(&scaled.select_outputs(&[row]).unwrap(), w).unwrap();
            assert!((big / base - 4.0).abs() < 1e-12, "{w:e}");
        }
    }
}

#[test]
fn separation_identity_holds() {
    let p = NetworkParams::ideal();
    let plant = build_plant(&p, true).unwrap();
    let meas = build_measurement_map(&p).unwrap();
    let syn = synthesize_detailed(&plant, &meas, &build_cost(&p).unwrap()).unwrap();
    let drift = closed_loop_drift(&plant, &meas, &syn.controller).unwrap();
    let a = plant.a();
    let bu = plant.b().columns(20, 8).clone_owned();
    let c = meas.c();
    let mut expected = eig(&(&a - &bu * &syn.regulator_gain));
    expected.extend(eig(&(&a - &syn.filter_gain * &c)));
    let got = eig(&drift);
    let scale = drift.norm();
    for z in &expected {
        let d = got.iter().map(|g| (g - z).norm()).fold(f64::INFINITY, f64::min);
        assert!(d <= 1e-6 * scale, "eigenvalue {z} missing: {d}");
    }
    assert!(spectral_abscissa(&drift) < 0.0);
}

fn eig(m: &nalgebra::DMatrix<f64>) -> Vec<Complex64> {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

#[test]
fn stable_loops_evaluate_on_the_default_grid() {
    let ctrl = common::ideal_controller();
    for p in cases() {
        let cl = loop_for(&p, &ctrl);
        let report = check_closed_loop(&cl, DEFAULT_ORDER).unwrap();
        assert_eq!(report.verdict, Verdict::Stable, "{p:?}");
        let grid = GridSpec::default().build(!cl.sys.is_delay_free()).unwrap();
        let s = closed_loop_spectra(&cl, &grid, Execution::Parallel).unwrap();
        assert!(s.v_sum.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}

#[test]
fn execution_modes_agree_bitwise() {
    let p = NetworkParams::ideal().with_delays(TRANSMISSION_DELAY, CONTROL_DELAY);
    let cl = loop_for(&p, &common::ideal_controller());
    let grid = FrequencyGrid::log(1e3, 1e9, 400).unwrap();
    let a = closed_loop_spectra(&cl, &grid, Execution::Sequential).unwrap();
    let b = closed_loop_spectra(&cl, &grid, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
