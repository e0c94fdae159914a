#![no_main]

use flowselect::FlowModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = FlowModel::from_bytes(data) {
        let _ = m.log_density(&vec![0.0; m.dim()]);
    }
});
