#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::ingest::Codebook;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cb) = Codebook::from_json(text) {
        assert_eq!(Codebook::from_json(&cb.to_json()).unwrap(), cb);
    }
});
