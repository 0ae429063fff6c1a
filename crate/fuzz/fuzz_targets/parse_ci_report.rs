#![no_main]

use libfuzzer_sys::fuzz_target;
use mdci_cli::report::{read_ci_csv, write_ci_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_ci_csv(data) {
        let mut buf = Vec::new();
        write_ci_csv(&rows, &mut buf).unwrap();
        let again = read_ci_csv(buf.as_slice()).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
