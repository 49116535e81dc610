#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsing only; dispatch would run experiments.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let argv = std::iter::once("opsa").chain(text.split('\0'));
    let _ = opsa_cli::parse(argv);
});
