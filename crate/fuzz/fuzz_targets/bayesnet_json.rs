#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::bayesnet::BayesNet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = BayesNet::from_json(text) {
        let json = net.to_json();
        assert_eq!(BayesNet::from_json(&json).unwrap().to_json(), json);
    }
});
