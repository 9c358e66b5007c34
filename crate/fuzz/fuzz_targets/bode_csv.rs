#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop::io::{read_bode_csv, write_bode_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(table) = read_bode_csv(text) else { return };
    let again = read_bode_csv(&write_bode_csv(&table.points)).expect("written table reads back");
    assert_eq!(again.points.len(), table.points.len());
    for (a, b) in again.points.iter().zip(&table.points) {
        assert_eq!(a.frequency_hz, b.frequency_hz);
        assert_eq!(a.magnitude, b.magnitude);
    }
});
