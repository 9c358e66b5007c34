use serfloop::lti::{bode_sweep, cutoff_3db, CutoffReference, Side, Spacing};
use serfloop::loopsim::{open_loop_tf, LoopComponents};
use serfloop::magnetometer::{
    analytic_px, dc_extremum, integrate_bloch, magnetometer_tf, sql_sensitivity, steady_state, CellConditions,
    CoilCalibration, FieldDrive, MagnetometerParams, Polarization,
};
use serfloop::spectral::{convert_noise, Conversion, Sidedness, SpectralDensity, TimeTrace, Unit};

// Independently computed: (1750 + 1750) / 1.76085963e11 T.
const EXTREMUM_T: f64 = 1.987666e-8;
// 1 / (2 pi q / (gamma_op + gamma_rel)) with q = 8.
const MAG_CORNER_HZ: f64 = 69.6311;

#[test]
fn extremum_field_matches_rates() {
    let b = dc_extremum(&MagnetometerParams::default()).unwrap();
    assert!((b / EXTREMUM_T - 1.0).abs() < 1e-6, "{b}");
    assert!((b / 20e-9 - 1.0).abs() < 0.05);
}

#[test]
fn steady_state_peaks_at_extremum() {
    let p = MagnetometerParams::default();
    let b0 = dc_extremum(&p).unwrap();
    let px = |b: f64| steady_state(&p, b).unwrap().px.abs();
    assert!(px(b0) > px(0.98 * b0) && px(b0) > px(1.02 * b0));
    assert!(steady_state(&p, b0).unwrap().px < 0.0);
}

#[test]
fn magnetometer_corner() {
    let p = MagnetometerParams::default();
    let pts = bode_sweep(&magnetometer_tf(&p).unwrap(), 0.1, 1e4, 4001, Spacing::Log).unwrap();
    let fc = cutoff_3db(&pts, CutoffReference::DcPlateau, Side::Upper).unwrap();
    assert!((fc / MAG_CORNER_HZ - 1.0).abs() < 1e-3, "{fc}");
    // q chosen so that q / (gamma_op + gamma_rel) = 1.1 ms
    let fitted = MagnetometerParams { q: 3.85, ..p };
    let pts = bode_sweep(&magnetometer_tf(&fitted).unwrap(), 0.1, 1e4, 4001, Spacing::Log).unwrap();
    let fc = cutoff_3db(&pts, CutoffReference::DcPlateau, Side::Upper).unwrap();
    assert!((fc / 144.686 - 1.0).abs() < 1e-3, "{fc}");
}

#[test]
fn loop_magnetometer_and_cascade_corner() {
    let lc = LoopComponents::fitted();
    let pts = bode_sweep(&lc.magnetometer, 0.1, 1e5, 4001, Spacing::Log).unwrap();
    let fc = cutoff_3db(&pts, CutoffReference::DcPlateau, Side::Upper).unwrap();
    assert!((fc / 144.7 - 1.0).abs() < 0.01, "{fc}");
    let open = bode_sweep(&open_loop_tf(&lc), 0.01, 1e6, 6001, Spacing::Log).unwrap();
    let fo = cutoff_3db(&open, CutoffReference::BandMax, Side::Upper).unwrap();
    assert!((100.0..=160.0).contains(&fo), "{fo}");
}

#[test]
fn sql_and_current_equivalent() {
    let (p, coil) = (MagnetometerParams::default(), CoilCalibration::default());
    let r = sql_sensitivity(&CellConditions::default(), &p, &coil).unwrap();
    let ratio = r.asd_tesla / 0.1e-15;
    assert!((1.0 / 1.5..=1.5).contains(&ratio), "{}", r.asd_tesla);
    let i = 0.1e-15 / coil.beta_y();
    assert!((i / 1.74e-12 - 1.0).abs() < 0.01, "{i}");
}

#[test]
fn field_floor_to_current() {
    let sd = SpectralDensity::new(vec![10.0, 20.0], vec![139e-15; 2], Sidedness::OneSided, 1, Unit::T).unwrap();
    let out = convert_noise(&sd, &[Conversion::CurrentFromField(CoilCalibration::default().beta_y())]).unwrap();
    assert_eq!(out.unit, Unit::A);
    assert!((out.asd[0] / 2.4132e-9 - 1.0).abs() < 1e-4, "{}", out.asd[0]);
    assert!((out.asd[0] / 2.46e-9 - 1.0).abs() < 0.03);
}

#[test]
fn linear_response_matches_bloch_integration() {
    let p = MagnetometerParams::default();
    let dt = 2e-6;
    let n = 40_000;
    // peak integral of Omega stays well under 0.05 rad
    let amp = 0.5e-9;
    let b: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            amp * ((2.0 * std::f64::consts::PI * 40.0 * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * 310.0 * t).sin())
        })
        .collect();
    let trace = TimeTrace::new(b, dt, Unit::T).unwrap();
    let lin = analytic_px(&p, &trace).unwrap();
    let p0 = steady_state(&p, 0.0).unwrap();
    let zero = TimeTrace::new(vec![0.0; n], dt, Unit::T).unwrap();
    let series = integrate_bloch(&p, &FieldDrive::Sampled([&zero, &trace, &zero]), p0, dt, (n - 1) as f64 * dt).unwrap();
    let full = series.px_trace().unwrap();
    let num: f64 = lin.samples().iter().zip(full.samples()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = full.samples().iter().map(|b| b * b).sum();
    assert!((num / den).sqrt() < 1e-3, "{}", (num / den).sqrt());
    assert_eq!(p0, Polarization::new(0.0, 0.0, 0.5));
}
