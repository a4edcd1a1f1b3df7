#![no_main]

use libfuzzer_sys::fuzz_target;
use msrb::cache::{decode_reduced, decode_snapshots};

fuzz_target!(|data: &[u8]| {
    let _ = decode_snapshots(data);
    let _ = decode_reduced(data);
});
