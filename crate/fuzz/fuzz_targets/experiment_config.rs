#![no_main]

use byrd_cli::config::parse_config;
use libfuzzer_sys::fuzz_target;

// Any config that parses and validates must survive a serialize/reparse
// round trip unchanged (the manifest embeds configs this way).
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = parse_config(text) {
        let emitted = toml::to_string(&config).expect("accepted config must re-serialize");
        let reparsed = parse_config(&emitted).expect("re-serialized config must reparse");
        assert_eq!(config, reparsed);
    }
});
