#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::context::ScopeMap;

fuzz_target!(|data: &str| {
    if let Ok(scope) = ScopeMap::from_json(data) {
        // resolution is total over arbitrary kernel names once parsing
        // succeeded, and every mentioned name is stored verbatim
        let _ = scope.resolve("ax");
        let _ = scope.resolve("");
        let _ = scope.mca_seed();
        for name in scope.mentioned_kernels() {
            let _ = scope.resolve(name);
        }
    }
});
