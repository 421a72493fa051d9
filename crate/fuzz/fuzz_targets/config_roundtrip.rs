#![no_main]

use horizon_calc::config::{parse_config_str, render_config};
use libfuzzer_sys::fuzz_target;

// Any input the parser accepts must survive a render/parse round trip
// unchanged.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(parsed) = parse_config_str(text) {
            let rendered = render_config(&parsed);
            let reparsed = parse_config_str(&rendered)
                .expect("canonical rendering of a valid config must parse");
            assert_eq!(parsed, reparsed, "round trip changed the config");
        }
    }
});
