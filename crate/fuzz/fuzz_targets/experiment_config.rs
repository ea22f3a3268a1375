#![no_main]

use evquant::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let again = ExperimentConfig::from_toml(&cfg.to_toml().expect("valid config serializes")).expect("round trip");
        assert_eq!(cfg.hash(), again.hash());
    }
});
