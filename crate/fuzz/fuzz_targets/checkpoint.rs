#![no_main]

use evquant::neural::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_slice(data) {
        let net = ckpt.to_mlp().expect("validated checkpoint builds a network");
        assert_eq!(net.params().len(), net.config().param_count());
    }
});
