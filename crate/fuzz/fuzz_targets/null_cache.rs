#![no_main]

use flowselect::sampler::NullSamples;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = NullSamples::from_bytes(data) {
        assert_eq!(s.samples.nrows(), s.acceptance_rate.len());
        let _ = s.truncated(s.k() / 2);
    }
});
