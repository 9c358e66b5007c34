#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop::io::{tf_from_json, tf_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tf) = tf_from_json(text) else { return };
    // evaluation may fail at a pole but must not panic
    let _ = tf.at_hz(1.0);
    tf_from_json(&tf_to_json(&tf)).expect("written transfer function reads back");
});
