#![no_main]

use dynsurr::data_model::{parse_panel_csv, write_panel_csv, PanelDims};
use libfuzzer_sys::fuzz_target;

// First byte picks the dimensions; the rest is the CSV body.
fuzz_target!(|data: &[u8]| {
    let Some((&shape, body)) = data.split_first() else {
        return;
    };
    let dims = PanelDims {
        p: 1 + (shape & 3) as usize,
        k_e: 1 + ((shape >> 2) & 1) as usize,
        k_o: 1 + ((shape >> 3) & 1) as usize,
        m: 1 + ((shape >> 4) & 3) as usize,
    };
    if let Ok(ds) = parse_panel_csv(body, dims) {
        let mut out = Vec::new();
        write_panel_csv(&ds, &mut out).expect("parsed panels serialize");
        let back = parse_panel_csv(out.as_slice(), dims).expect("written panels parse");
        assert_eq!(back.units.len(), ds.units.len());
    }
});
