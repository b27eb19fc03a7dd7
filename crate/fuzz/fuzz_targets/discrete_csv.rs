#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::ingest::{Codebook, DiscreteTable};

const CODEBOOK: &str = include_str!("../corpus/codebook_json/weather.json");

fuzz_target!(|data: &[u8]| {
    let codebook = Codebook::from_json(CODEBOOK).unwrap();
    if let Ok(table) = DiscreteTable::from_csv("fuzz", data, &codebook) {
        let csv = table.to_csv();
        assert_eq!(DiscreteTable::from_csv("fuzz", csv.as_bytes(), &codebook).unwrap(), table);
    }
});
