#![no_main]

use libfuzzer_sys::fuzz_target;
use opsa::harness::{parse_trace_csv, write_trace_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_trace_csv(text) {
        let again = parse_trace_csv(&write_trace_csv(&records)).unwrap();
        assert_eq!(again.len(), records.len());
    }
});
