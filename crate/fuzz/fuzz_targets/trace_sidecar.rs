#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop::io::parse_trace_sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sc) = parse_trace_sidecar(text) {
            assert!(sc.dt_s > 0.0 && sc.dt_s.is_finite());
        }
    }
});
