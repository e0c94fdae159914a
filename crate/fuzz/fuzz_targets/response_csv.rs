#![no_main]

use std::path::Path;

use flowselect::data::read_response_csv_from;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_response_csv_from(data, Path::new("fuzz.csv"));
});
