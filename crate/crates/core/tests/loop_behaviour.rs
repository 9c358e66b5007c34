use serfloop::experiments::{noise_suppression, SuppressionConfig};
use serfloop::lti::RationalTransferFunction;
use serfloop::loopsim::{
    bandwidth_enhancement, bandwidth_report, closed_loop_tf, is_closed_loop_stable, simulate_loop, ziegler_nichols_tune,
    InputSignal, LoopComponents, LoopMode, NoiseSpec, PidParams, SimulationRun,
};

#[test]
fn closed_loop_bandwidth_against_reference() {
    let lc = LoopComponents::fitted().with_ideal_pid();
    let r = bandwidth_report(&lc).unwrap();
    assert!((r.closed_cutoff_hz / 6.9e3 - 1.0).abs() < 0.3, "{}", r.closed_cutoff_hz);
    let e = bandwidth_enhancement(&lc).unwrap();
    assert!((40.0..=90.0).contains(&e), "{e}");
    assert_eq!(e, r.ratio);
}

#[test]
fn disturbance_function_shape() {
    let (_, g_d) = closed_loop_tf(&LoopComponents::fitted()).unwrap();
    let at = |f: f64| g_d.at_hz(f).unwrap().norm();
    // grows linearly with frequency well inside the loop bandwidth
    assert!((at(10.0) / at(1.0) / 10.0 - 1.0).abs() < 0.02);
    assert!(at(1.0) < 1e-5);
    let peak = (0..400).map(|k| at(1e3 * 1.01f64.powi(k))).fold(0.0, f64::max);
    assert!(peak > 2.0 && peak < 10.0, "{peak}");
    assert!((at(1e6) - 1.0).abs() < 0.05);
}

#[test]
fn ziegler_nichols_third_order() {
    let plant = RationalTransferFunction::new(vec![1.0], vec![1.0, 3.0, 3.0, 1.0], "").unwrap();
    let zn = ziegler_nichols_tune(&plant).unwrap();
    assert!((zn.k_u / 8.0 - 1.0).abs() < 5e-3);
    assert!((zn.omega_180 / 3f64.sqrt() - 1.0).abs() < 5e-3);
    assert!((zn.pid.k_pid - 4.8).abs() < 0.03);
}

#[test]
fn tuned_loop_is_stable() {
    let lc = LoopComponents::fitted();
    assert!(is_closed_loop_stable(&lc).unwrap());
    let hot = lc.clone().with_pid(PidParams::filtered(1e5, 111e-6, 28e-6));
    assert!(!is_closed_loop_stable(&hot).unwrap());
}

#[test]
fn shaping_follows_disturbance_function() {
    let cfg = SuppressionConfig {
        sample_rate_hz: 100e3,
        segment_s: 0.25,
        segments: 100,
        band_hz: [4.0, 1e3],
        acquisition_cutoff_hz: 10e3,
        ..Default::default()
    };
    let out = noise_suppression(&LoopComponents::fitted(), &cfg).unwrap();
    assert!(out.max_shaping_error_db < 3.0, "{}", out.max_shaping_error_db);
    assert!(out.min_ratio_in_band < 1e-3);
}

#[test]
fn record_traces_are_deterministic() {
    let lc = LoopComponents::fitted();
    let run = || {
        simulate_loop(
            &lc,
            &SimulationRun::new(0.02, 1e-5, LoopMode::ClosedLoop, InputSignal::Sine { amplitude: 1e-3, frequency_hz: 200.0 }),
            &NoiseSpec::white_rms(1e-6, 7),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}
