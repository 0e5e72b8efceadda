#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::field::FieldSidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(sc) = serde_json::from_slice::<FieldSidecar>(data) {
        let text = serde_json::to_string(&sc).unwrap();
        let again: FieldSidecar = serde_json::from_str(&text).unwrap();
        assert_eq!(sc, again);
    }
});
