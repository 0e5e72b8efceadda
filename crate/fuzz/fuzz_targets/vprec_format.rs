#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::fpemu::VprecFormat;

fuzz_target!(|data: &str| {
    if let Ok(fmt) = data.parse::<VprecFormat>() {
        // the compact form must survive a round trip
        let again: VprecFormat = fmt.to_string().parse().unwrap();
        assert_eq!(fmt, again);
    }
});
