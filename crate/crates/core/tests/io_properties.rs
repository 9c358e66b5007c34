use proptest::prelude::*;
use serfloop::io::{
    parse_trace_sidecar, read_bode_csv, read_spectral_csv, read_trace_csv, tf_from_json, tf_to_json, write_bode_csv,
    write_spectral_csv, write_trace_csv,
};
use serfloop::lti::{FrequencyResponsePoint, RationalTransferFunction};
use serfloop::spectral::{Sidedness, SpectralDensity, TimeTrace, Unit};

fn unit() -> impl Strategy<Value = Unit> {
    prop_oneof![Just(Unit::V), Just(Unit::A), Just(Unit::T)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn trace_round_trip(samples in prop::collection::vec(-1e3f64..1e3, 2..200), dt in 1e-7f64..1.0, u in unit()) {
        let tr = TimeTrace::new(samples, dt, u).unwrap();
        let back = read_trace_csv(&write_trace_csv(&tr), None).unwrap();
        prop_assert_eq!(back.unit(), u);
        prop_assert_eq!(back.len(), tr.len());
        prop_assert!((back.dt() / dt - 1.0).abs() < 1e-9);
        for (a, b) in tr.samples().iter().zip(back.samples()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bode_round_trip(mags in prop::collection::vec(1e-9f64..1e9, 2..100), phase in -10.0f64..10.0) {
        let pts: Vec<_> = mags.iter().enumerate().map(|(k, m)| FrequencyResponsePoint {
            frequency_hz: 0.1 * 1.1f64.powi(k as i32),
            magnitude: *m,
            phase_rad: phase + k as f64 * 1e-3,
        }).collect();
        let table = read_bode_csv(&write_bode_csv(&pts)).unwrap();
        prop_assert!(table.has_phase);
        prop_assert_eq!(table.points, pts);
    }

    #[test]
    fn spectral_round_trip(asd in prop::collection::vec(1e-18f64..1.0, 2..100), u in unit()) {
        let f: Vec<f64> = (1..=asd.len()).map(|k| k as f64 * 0.5).collect();
        let sd = SpectralDensity::new(f, asd, Sidedness::OneSided, 7, u).unwrap();
        let back = read_spectral_csv(&write_spectral_csv(&sd), Sidedness::OneSided, 7).unwrap();
        prop_assert_eq!(back, sd);
    }

    #[test]
    fn tf_json_round_trip(num in prop::collection::vec(-1e3f64..1e3, 1..4), den in prop::collection::vec(0.1f64..1e3, 4..6)) {
        let tf = RationalTransferFunction::new(num, den, "V/A").unwrap();
        prop_assert_eq!(tf_from_json(&tf_to_json(&tf)).unwrap(), tf);
    }

    #[test]
    fn decoders_never_panic(text in "\\PC{0,400}") {
        let _ = read_trace_csv(&text, None);
        let _ = read_bode_csv(&text);
        let _ = read_spectral_csv(&text, Sidedness::OneSided, 1);
        let _ = tf_from_json(&text);
        let _ = parse_trace_sidecar(&text);
    }

    #[test]
    fn numeric_tables_never_panic(rows in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 0..30)) {
        let body: String = rows.iter().map(|(a, b, c)| format!("{a},{b},{c}\n")).collect();
        let _ = read_bode_csv(&body);
        let _ = read_trace_csv(&format!("t_s,V\n{body}"), None);
    }
}

#[test]
fn headerless_trace_with_sidecar() {
    let side = parse_trace_sidecar(r#"{"dt_s": 0.001, "unit": "A"}"#).unwrap();
    let tr = read_trace_csv("0,1\n0.001,2\n0.002,3\n", Some(&side)).unwrap();
    assert_eq!(tr.unit(), Unit::A);
    assert_eq!(tr.samples(), &[1.0, 2.0, 3.0]);
}

#[test]
fn malformed_inputs_name_the_line() {
    let err = read_bode_csv("frequency_hz,magnitude\n1,2\n2,x\n").unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
    assert!(read_bode_csv("frequency_hz,magnitude\n2,1\n1,1\n").is_err());
    assert!(read_bode_csv("frequency_hz,magnitude\n1,-1\n2,1\n").is_err());
    assert!(parse_trace_sidecar(r#"{"dt_s": 0.001, "unit": "A", "extra": 1}"#).is_err());
}
