#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop_cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_toml(text) {
            let _ = cfg.canonical_json();
        }
    }
});
