#![no_main]

use evquant::data::parse_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for &delimiter in b",;\t" {
        if let Ok(ds) = parse_csv(data, "y", delimiter) {
            assert_eq!(ds.features().rows(), ds.targets().len());
            assert!(ds.features().all_finite());
            assert!(ds.targets().iter().all(|v| v.is_finite()));
        }
    }
});
