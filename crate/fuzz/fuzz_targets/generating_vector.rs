#![no_main]

use libfuzzer_sys::fuzz_target;
use msrb::sampling::parse_generating_vector;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = parse_generating_vector(&text);
});
