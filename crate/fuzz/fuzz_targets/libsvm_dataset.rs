//! The LIBSVM loader must never panic, and accepted datasets must satisfy
//! the same shape and finiteness invariants as the CSV path.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = irco::data::load_libsvm_reader(data) {
        assert_eq!(ds.features.rows(), ds.labels.len());
        assert!(ds.labels.iter().all(|&y| y <= 1));
        for i in 0..ds.features.rows() {
            assert!(ds.features.row(i).iter().all(|x| x.is_finite()));
        }
    }
});
