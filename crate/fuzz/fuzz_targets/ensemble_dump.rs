#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ens) = opsa::sensing::decode_dump(data) {
        let mut again = Vec::new();
        ens.write_dump(&mut again).unwrap();
        assert_eq!(again, data);
    }
});
