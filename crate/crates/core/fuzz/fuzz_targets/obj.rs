#![no_main]

use flexoct::cli_io::{obj_string, parse_obj};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_obj(text) {
        // whatever parses must survive a round trip
        assert_eq!(parse_obj(&obj_string(&r, None)).ok(), Some(r));
    }
});
