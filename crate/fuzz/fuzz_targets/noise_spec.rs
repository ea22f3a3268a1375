#![no_main]

use evquant::dist::NoiseSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = NoiseSpec::from_json(data);
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = NoiseSpec::from_toml(text);
    }
});
