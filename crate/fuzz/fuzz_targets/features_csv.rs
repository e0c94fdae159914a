#![no_main]

use std::path::Path;

use flowselect::FeatureMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = FeatureMatrix::read_csv_from(data, Path::new("fuzz.csv")) {
        assert!(m.values().iter().all(|v| v.is_finite()));
    }
});
