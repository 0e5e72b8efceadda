#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::mesh::MeshSpec;

// Parses and revalidates only — building a mesh from a hostile spec would
// just be an allocation benchmark.
fuzz_target!(|data: &str| {
    if let Ok(spec) = data.parse::<MeshSpec>() {
        spec.validate().unwrap();
        let again: MeshSpec = spec.to_string().parse().unwrap();
        assert_eq!(spec, again);
    }
});
