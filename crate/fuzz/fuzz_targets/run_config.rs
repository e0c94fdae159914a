#![no_main]

use flowselect::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = RunConfig::from_toml(text) {
            let _ = c.validate();
            let back = RunConfig::from_toml(&c.to_toml()).expect("snapshot parses");
            assert_eq!(back, c);
        }
    }
});
