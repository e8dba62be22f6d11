#![no_main]

use dynsurr::dgp::{ground_truth_theta, LinearDgpParams};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(params) = LinearDgpParams::from_json(text) {
        if params.p <= 16 && params.m <= 16 {
            let _ = ground_truth_theta(&params);
        }
    }
});
