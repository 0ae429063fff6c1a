#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Err(e) = mdci_cli::config::parse_config(text) {
            let _ = e.to_string();
        }
    }
});
