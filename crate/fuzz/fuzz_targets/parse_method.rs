#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = mdci_cli::config::parse_method(text) {
            assert_eq!(mdci_cli::config::parse_method(m.as_str()).ok(), Some(m));
        }
    }
});
