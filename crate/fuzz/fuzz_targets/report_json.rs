#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::eval::Report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = Report::from_json(text) {
        let _ = report.to_text();
    }
});
