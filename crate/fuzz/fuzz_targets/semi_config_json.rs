#![no_main]

use dynsurr::dgp::{SemiSynthConfig, SemiSynthModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = SemiSynthConfig::from_json(text) {
        // Keep model construction cheap.
        if cfg.state_dim() <= 40 && cfg.m <= 8 && cfg.burn_in <= 50 {
            let _ = SemiSynthModel::build(&cfg);
        }
    }
});
