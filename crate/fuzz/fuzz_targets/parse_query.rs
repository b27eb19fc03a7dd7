#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::ingest::Codebook;
use probtab::querylang::{parse_query, render_query};

const CODEBOOK: &str = include_str!("../corpus/codebook_json/weather.json");

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let codebook = Codebook::from_json(CODEBOOK).unwrap();
    if let Ok(q) = parse_query(text, &codebook) {
        // anything that parses renders to text that parses back to it
        let rendered = render_query(&q, &codebook);
        let back = parse_query(&rendered, &codebook).unwrap();
        assert!(back.same_condition(&q), "{rendered}");
    }
});
