//! The CSV loader must never panic, and any dataset it accepts must satisfy
//! the invariants the rest of the crate relies on.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = irco::data::load_csv_reader(data) {
        assert_eq!(ds.features.rows(), ds.labels.len());
        assert!(ds.labels.iter().all(|&y| y <= 1));
        if let Some(groups) = &ds.groups {
            assert_eq!(groups.len(), ds.labels.len());
        }
        for i in 0..ds.features.rows() {
            assert!(ds.features.row(i).iter().all(|x| x.is_finite()));
        }
    }
});
