#![no_main]

use evquant::harness::TrainRecipe;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(recipe) = TrainRecipe::from_toml(text) {
        let _ = recipe.train_config(0);
    }
});
