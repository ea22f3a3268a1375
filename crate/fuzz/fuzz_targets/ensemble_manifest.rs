#![no_main]

use evquant::baselines::EnsembleManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = EnsembleManifest::from_slice(data);
});
