#![no_main]

use dynsurr::estimators::EstimatorConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<EstimatorConfig>(data) {
        let _ = cfg.validate();
    }
});
