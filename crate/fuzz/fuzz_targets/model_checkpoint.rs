//! Fuzzes the model checkpoint JSON decoder. Accepted checkpoints must be
//! internally consistent and survive a serialize/parse round trip.

#![no_main]

use irco::model::ModelParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(params) = ModelParams::from_json_str(text) else {
        return;
    };
    assert_eq!(params.theta.len(), params.arch.param_count());
    assert!(params.theta.iter().all(|t| t.is_finite()));
    let json = params.to_json().expect("accepted checkpoints serialize");
    let back = ModelParams::from_json_str(&json).expect("serialized checkpoints parse back");
    assert_eq!(back, params);
});
