#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop::io::{parse_trace_sidecar, read_trace_csv, write_trace_csv};

// First line may carry a sidecar; the rest is the CSV body.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (head, body) = text.split_once('\n').unwrap_or(("", text));
    let sidecar = parse_trace_sidecar(head).ok();
    let Ok(trace) = read_trace_csv(body, sidecar.as_ref()) else { return };
    let again = read_trace_csv(&write_trace_csv(&trace), None).expect("written trace reads back");
    assert_eq!(again.len(), trace.len());
});
