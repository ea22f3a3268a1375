#![no_main]

use evquant::data::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = DatasetManifest::from_slice(data);
});
