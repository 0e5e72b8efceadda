#![no_main]

use libfuzzer_sys::fuzz_target;
use mixprec::roofline::{ComputeClass, MachineModel};

fuzz_target!(|data: &str| {
    if let Ok(model) = MachineModel::from_json(data) {
        // a model that parsed is safe to query anywhere on the ai axis
        for ai in [1e-6, 0.125, 1.0, 1e9] {
            let _ = model.attainable(ComputeClass::DpVector, ai);
            let _ = model.classify(ComputeClass::SpVector, ai);
            let _ = model.predict_precision_gain(ai);
            let _ = model.memory_ceilings(ai);
        }
    }
});
