#![no_main]

use flowselect::container::Container;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        // anything that decodes must re-encode to a decodable container
        let again = Container::decode(&c.encode()).expect("re-encoded container decodes");
        assert_eq!(again.magic, c.magic);
        assert_eq!(again.header, c.header);
    }
});
