#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::context::Backend;

fuzz_target!(|data: &str| {
    if let Ok(b) = data.parse::<Backend>() {
        let again: Backend = b.to_string().parse().unwrap();
        assert_eq!(b, again);
    }
});
