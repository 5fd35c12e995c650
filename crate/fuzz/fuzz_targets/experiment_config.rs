//! Experiment configs come from user-written JSON; parsing must never panic
//! and anything accepted must survive its own validation and re-serialize.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = irco::harness::ExperimentConfig::from_json_str(text) {
        assert!(cfg.validate().is_ok());
        let json = serde_json::to_string(&cfg).expect("accepted configs serialize");
        irco::harness::ExperimentConfig::from_json_str(&json)
            .expect("serialized configs parse back");
    }
});
