#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::eval::extract_probability;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Some(p) = extract_probability(&text) {
        assert!((0.0..=1.0).contains(&p), "{p}");
    }
});
