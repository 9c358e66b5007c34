#![no_main]

use libfuzzer_sys::fuzz_target;
use serfloop::io::{read_spectral_csv, write_spectral_csv};
use serfloop::spectral::Sidedness;

// The first byte picks sidedness and the averaging count.
fuzz_target!(|data: &[u8]| {
    let Some((&flags, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let sidedness = if flags & 1 == 0 { Sidedness::OneSided } else { Sidedness::TwoSided };
    let n_averages = usize::from(flags >> 1);
    let Ok(sd) = read_spectral_csv(text, sidedness, n_averages) else { return };
    let again = read_spectral_csv(&write_spectral_csv(&sd), sidedness, n_averages).expect("written density reads back");
    assert_eq!(again.asd.len(), sd.asd.len());
});
