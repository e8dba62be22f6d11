#![no_main]

use dynsurr_cli::experiment::{read_results, summarize, write_results};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_results(data) {
        let _ = summarize(&rows);
        let mut out = Vec::new();
        write_results(&rows, &mut out).expect("rows serialize");
        assert_eq!(read_results(out.as_slice()).expect("written rows parse").len(), rows.len());
    }
});
