#![no_main]

use dynsurr::data_model::PanelMetaFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(meta) = serde_json::from_slice::<PanelMetaFile>(data) {
        let _ = meta.dims();
        let text = serde_json::to_string(&meta).unwrap();
        assert_eq!(serde_json::from_str::<PanelMetaFile>(&text).unwrap(), meta);
    }
});
