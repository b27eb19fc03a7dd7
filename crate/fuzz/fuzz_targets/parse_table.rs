#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::ingest::{discretize, infer_column_kinds, parse_table, KindConfig};

fuzz_target!(|data: &[u8]| {
    let Some((&flags, body)) = data.split_first() else { return };
    let delimiter = [b',', b';', b'\t', b'|'][usize::from(flags & 3)];
    let Ok(table) = parse_table("fuzz", body, delimiter, flags & 4 == 0) else { return };
    let kinds = infer_column_kinds(&table, &KindConfig::default());
    if let Ok((discrete, codebook)) = discretize(&table, &kinds, 2 + usize::from(flags >> 5)) {
        assert_eq!(discrete.row_count(), table.row_count());
        codebook.validate().unwrap();
    }
});
